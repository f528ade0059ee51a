#include "surfreg/model.hpp"

#include <stdexcept>

namespace surfreg {

void ModelConfig::validate() const {
  encoder.validate();
  if (d_model < 1 || hidden1 < 1 || hidden2 < 1)
    throw std::invalid_argument("model widths must be positive");
}

}  // namespace surfreg
