"""Counterfactual error variance of trained CFRNET_WASS and PIPCFR_WASS on the example1 SEM."""

from _common import parser, run

if __name__ == "__main__":
    ap = parser(__doc__, out="runs/cf_variance")
    ap.add_argument("--sigma-u", type=float, default=2.0)
    args = ap.parse_args()
    grid = {"seed": list(range(args.seeds)), "method": ["CFRNET_WASS", "PIPCFR_WASS"]}
    base = {"data.kind": "example1", "data.sigma_u": args.sigma_u, "data.n": 4000}
    run(grid, base, args, ["method"], ("cf_error_mean", "cf_error_var", "pehe_out"))
