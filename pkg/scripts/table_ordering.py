"""PEHE of TARNET, CFRNET_WASS and PIPCFR_WASS on the temporal generator (K=20, 5 features, n=4000)."""

from _common import parser, run

if __name__ == "__main__":
    args = parser(__doc__, out="runs/table_ordering").parse_args()
    grid = {"seed": list(range(args.seeds)), "method": ["TARNET", "CFRNET_WASS", "PIPCFR_WASS"]}
    run(grid, {"data.kind": "temporal", "data.K": 20, "data.feat_dim": 5, "data.n": 4000}, args, ["method"])
