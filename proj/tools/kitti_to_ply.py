#!/usr/bin/env python3
"""Convert a KITTI velodyne scan (.bin, float32 x y z reflectance) to the PLY
layout `surfreg surfels` reads for bare points:

    element vertex N
    property float x          sensor frame, meters
    property float y
    property float z
    property float intensity  optional, [0, 1]

Poses are not converted. For a pair (i, j) with KITTI poses P_i, P_j (camera
frame, 3x4) and the velodyne-to-camera calibration Tr, the ground truth the
tools expect in <id>_gt.txt maps source into target:

    gt = inv(Tr) inv(P_j) P_i Tr     (written as 3 rows of 4 numbers)
"""
import argparse
import sys

import numpy as np


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("scan", help="velodyne .bin file")
    ap.add_argument("out", help="output .ply")
    ap.add_argument("--max-range", type=float, default=80.0, help="drop returns beyond this range (m)")
    args = ap.parse_args()

    raw = np.fromfile(args.scan, dtype="<f4")
    if raw.size % 4:
        print(f"{args.scan}: size is not a multiple of 16 bytes", file=sys.stderr)
        return 2
    pts = raw.reshape(-1, 4)
    pts = pts[np.linalg.norm(pts[:, :3], axis=1) <= args.max_range]
    pts[:, 3] = np.clip(pts[:, 3], 0.0, 1.0)

    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\nproperty float intensity\nend_header\n"
    )
    with open(args.out, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(pts.astype("<f4").tobytes())
    return 0


if __name__ == "__main__":
    sys.exit(main())
