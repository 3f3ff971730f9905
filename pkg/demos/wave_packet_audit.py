"""Decompose a random band-limited function on the parabola and audit the packets.

Run with ``python3 demos/wave_packet_audit.py [R]`` (R a power of 4, default 64).
Writes the extension on the ball B_R to ``wave_field.bin`` in the current directory.
"""

import sys

from flab.wavepackets import (
    audit,
    decompose,
    default_spacing,
    local_l2_ratio,
    random_band_limited,
    random_shading,
    save_field,
)


def main(R: int = 64):
    h = default_spacing(R)
    f = random_band_limited(R, h, seed=1)
    W = decompose(f, R)
    A = audit(W)
    print(f"R={R}  h={h:g}  packets={len(W)}")
    for key, value in A.to_dict().items():
        print(f"  {key:<15} {value}")
    ratios = local_l2_ratio(W, [random_shading(W, R**-0.25, s) for s in range(5)])
    print("  local L2 ratios", ", ".join(f"{r:.3f}" for r in ratios))
    save_field("wave_field.bin", W.full_field(), 2, R, h)
    print("wrote wave_field.bin")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 64)
