"""Agreement of the four-corner envelope with full net dynamics.

Sweeps grid resolution and the corner restitution, printing agreement and
the confusion counts for each setting.

    python scripts/envelope_study.py
"""

import argparse

from mavcapture.harness.config import preset, replace_path
from mavcapture.harness.studies import envelope_study


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--restitution", type=float, nargs="*", default=[0.0, 0.3])
    ap.add_argument("--resolution", type=int, nargs=2, action="append", default=None, metavar=("N_AXIAL", "N_LATERAL"))
    args = ap.parse_args()

    for e in args.restitution:
        cfg = replace_path(preset("sim4"), **{"capture.restitution": e})
        for n_axial, n_lateral in args.resolution or [(12, 7), (16, 9)]:
            st = envelope_study(cfg, n_axial, n_lateral)
            print(
                f"restitution {e:.2f} grid {n_axial}x{n_lateral}x{n_lateral}: agreement {100 * st.agreement:.1f}%  "
                f"{st.confusion()}  t_star {st.envelope.t_star:.3f} s  speedup {st.speedup:.3g}x"
            )


if __name__ == "__main__":
    main()
