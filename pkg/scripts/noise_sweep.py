"""PEHE as the post-treatment noise scale eps_u grows, per method."""

from _common import parser, run

if __name__ == "__main__":
    ap = parser(__doc__, seeds=3, out="runs/noise_sweep")
    ap.add_argument("--eps-u", default="1,3,5")
    args = ap.parse_args()
    grid = {"seed": list(range(args.seeds)), "data.eps_u": [float(v) for v in args.eps_u.split(",")],
            "method": ["TARNET", "CFRNET_WASS", "PIPCFR_WASS"]}
    run(grid, {"data.kind": "temporal"}, args, ["method", "data.eps_u"], ("pehe_out",))
