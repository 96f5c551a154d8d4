"""PIPCFR_WASS PEHE over the KL weight gamma, under both KL sign conventions."""

from _common import parser, run

if __name__ == "__main__":
    ap = parser(__doc__, out="runs/gamma_sweep")
    ap.add_argument("--gammas", default="0,0.1,0.5,1")
    args = ap.parse_args()
    grid = {"seed": list(range(args.seeds)), "train.kl_sign": ["as_written", "flipped"],
            "train.gamma": [float(v) for v in args.gammas.split(",")]}
    run(grid, {"data.kind": "temporal", "train.method": "PIPCFR_WASS"}, args,
        ["train.kl_sign", "train.gamma"], ("pehe_out",))
