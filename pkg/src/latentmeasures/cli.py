"""Command-line pipeline: simulate, fit, postprocess, align, summarize, prior-analyze."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import io as lmio
from .align import align_chain
from .config import ConfigError, RunConfig, load_config
from .gibbs import run_chain
from .measures import DensityGrid
from .prioranalytics import (
    IidGammaLoadings,
    MgpLoadings,
    PriorSpec,
    corm_moments,
    corr_iid_scores,
    expectation_mc,
    jump_ratio_study,
    mc_corm_moments,
    mc_group_correlation,
    mgp_cov_terms,
    truncated_corm_moments,
)
from .slopt import transform_chain
from .summaries import (
    aligned_means,
    cluster_loadings,
    group_density_decomposition,
    kl_to_truth,
    waic,
)
from .synthdata import generate_dirichlet_mix, generate_spatial_lattice

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentmeasures",
        description="Normalized latent measure factor models: simulation, fitting, post-processing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="INI configuration file")
        p.add_argument(
            "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
            help="override one config entry (repeatable)",
        )
        p.add_argument("--seed", type=int, help="override run.seed")

    p = sub.add_parser("simulate", help="generate a synthetic benchmark dataset")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="run the sampler on grouped observations")
    common(p)
    p.add_argument("--data", help="group,value CSV (defaults to data.path in config)")
    p.add_argument("--adjacency", help="i,j edge CSV for the spatial prior")
    p.add_argument("--out", required=True, help="chain output directory")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("postprocess", help="solve the separation transform per draw")
    common(p)
    p.add_argument("--chain", required=True, help="chain directory from fit")
    p.add_argument("--threads", type=int, help="override run.threads")
    p.set_defaults(func=_cmd_postprocess)

    p = sub.add_parser("align", help="match transformed draws to the template")
    common(p)
    p.add_argument("--chain", required=True, help="chain directory with transforms.csv")
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("summarize", help="aligned posterior means, scores, WAIC")
    common(p)
    p.add_argument("--chain", required=True, help="chain directory with alignment")
    p.add_argument("--data", help="observations CSV (defaults to the fit's path)")
    p.add_argument("--truth", help="optional truth CSV for KL diagnostics")
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("prior-analyze", help="closed-form vs Monte Carlo prior studies")
    common(p)
    p.add_argument("--out", required=True, help="output directory for CSV tables")
    p.add_argument("--draws", type=int, default=1_000_000, help="Monte Carlo sample size")
    p.add_argument("--atoms", type=int, default=2000, help="truncation level for MC draws")
    p.add_argument("--alpha", type=float, default=0.5, help="base-set mass")
    p.add_argument("--psi", type=float, default=1.0, help="iid loadings shape")
    p.set_defaults(func=_cmd_prior_analyze)

    return parser


def _load(args: argparse.Namespace) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    return load_config(args.config, overrides)


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    if cfg.scenario == "dirichlet-mix":
        synth = generate_dirichlet_mix(cfg.sim_groups, cfg.sim_n_per_group, rng)
    else:
        synth = generate_spatial_lattice(cfg.sim_lattice_q, cfg.sim_n_per_group, rng)
    lmio.write_grouped_csv(out / "data.csv", synth.data)
    lmio.write_truth_csv(out / "truth.csv", synth.true_measures)
    if synth.adjacency is not None:
        lmio.write_adjacency_csv(out / "adjacency.csv", synth.adjacency)
    lmio.write_json(out / "meta.json", {"stage": "simulate", "config": cfg.resolved()})
    print(f"wrote {synth.n_groups} groups to {out}")
    return 0


def _cmd_fit(args: argparse.Namespace) -> int:
    cfg = _load(args)
    data_path = args.data or cfg.data_path
    if not data_path:
        raise ConfigError("no data file: pass --data or set data.path in the config")
    data, labels = lmio.read_grouped_csv(data_path)
    rng = np.random.default_rng(cfg.seed)
    if cfg.jitter_sd is not None:
        data = lmio.jitter_values(data, cfg.jitter_sd, rng)
    adjacency = None
    if cfg.prior_kind == "car":
        adj_path = args.adjacency or cfg.adjacency_path
        if not adj_path:
            raise ConfigError(
                "spatial prior needs an adjacency file: pass --adjacency or prior.adjacency"
            )
        adjacency = lmio.read_adjacency_csv(adj_path, n_sites=data.n_groups)
    settings = cfg.chain_settings(adjacency)
    record = run_chain(data, settings, rng)
    meta = {
        "stage": "fit",
        "config": cfg.resolved(),
        "data_path": str(data_path),
        "adjacency_path": str(args.adjacency or cfg.adjacency_path or ""),
        "group_labels": labels,
    }
    lmio.write_chain(args.out, record, meta)
    print(
        f"kept {record.n_draws} draws ({record.n_factors} factors) in {args.out}"
    )
    return 0


def _cmd_postprocess(args: argparse.Namespace) -> int:
    cfg = _load(args)
    record, meta = lmio.read_chain(args.chain)
    threads = args.threads if args.threads is not None else cfg.threads
    results = transform_chain(
        record,
        cfg.rattle_config(),
        cfg.alm_state(record.n_groups, record.n_factors, record.n_atoms),
        penalty=cfg.pp_penalty,
        orthogonal_projection=cfg.pp_orthogonal,
        rho_factor=cfg.pp_rho_factor,
        outer_cap=cfg.pp_outer_cap,
        threads=threads,
    )
    lmio.write_transforms(Path(args.chain) / lmio.TRANSFORMS_NAME, results)
    meta["postprocess"] = {"config": cfg.resolved(), "threads": threads}
    lmio.write_json(Path(args.chain) / lmio.META_NAME, meta)
    n_ok = sum(r.success for r in results)
    print(f"transformed {len(results)} draws, {n_ok} fully successful")
    return 0


def _require_transforms(chain_dir: str) -> Path:
    path = Path(chain_dir) / lmio.TRANSFORMS_NAME
    if not path.is_file():
        raise ConfigError(
            f"{path} not found: run `postprocess --chain {chain_dir}` first"
        )
    return path


def _cmd_align(args: argparse.Namespace) -> int:
    cfg = _load(args)
    record, meta = lmio.read_chain(args.chain)
    path = _require_transforms(args.chain)
    rows, _, _ = lmio.read_transforms(path)
    if len(rows) != record.n_draws:
        raise ConfigError(
            f"{path} covers {len(rows)} draws but the chain has {record.n_draws}"
        )
    template, perms = align_chain(record, rows, metric=cfg.align_metric)
    lmio.write_transforms(path, rows, perms, template_draw=template.draw_index)
    meta["align"] = {"metric": cfg.align_metric, "template_draw": template.draw_index}
    lmio.write_json(Path(args.chain) / lmio.META_NAME, meta)
    print(f"aligned {record.n_draws} draws to template draw {template.draw_index}")
    return 0


def _cmd_summarize(args: argparse.Namespace) -> int:
    cfg = _load(args)
    record, meta = lmio.read_chain(args.chain)
    path = _require_transforms(args.chain)
    rows, perms, template_draw = lmio.read_transforms(path)
    if perms is None:
        raise ConfigError(
            f"{path} has no permutations: run `align --chain {args.chain}` first"
        )
    data_path = args.data or meta.get("data_path", "")
    if not data_path:
        raise ConfigError("no data file recorded; pass --data")
    data, _ = lmio.read_grouped_csv(data_path)

    grid_axis = DensityGrid.for_data(data, n_points=cfg.grid_points)
    summary = aligned_means(record, rows, perms, grid_axis)
    factors, groups, pbar = group_density_decomposition(summary)
    labels, cluster_means = cluster_loadings(summary.lambda_prime, cfg.n_clusters)
    waic_val, lppd, p_waic = waic(record, data)

    chain_dir = Path(args.chain)
    lmio.write_json(
        chain_dir / "summary.json",
        {
            "n_draws": summary.n_draws,
            "template_draw": template_draw,
            "masses": summary.masses,
            "importance": summary.importance,
            "scores": summary.scores,
            "lambda_prime": summary.lambda_prime,
            "cluster_labels": labels,
            "cluster_means": cluster_means,
            "waic": waic_val,
            "lppd": lppd,
            "p_waic": p_waic,
        },
    )
    with open(chain_dir / "waic.txt", "w", encoding="utf-8", newline="") as fh:
        fh.write(f"waic {lmio.fmt_float(waic_val)}\n")
        fh.write(f"lppd {lmio.fmt_float(lppd)}\n")
        fh.write(f"p_waic {lmio.fmt_float(p_waic)}\n")

    names = (
        [f"factor_{h}" for h in range(summary.n_factors)]
        + [f"group_{j}" for j in range(summary.n_groups)]
        + ["mean"]
        + [f"residual_{h}" for h in range(summary.n_factors)]
    )
    values = np.vstack([factors, groups, pbar[None, :], factors - pbar[None, :]])
    DensityGrid(points=summary.grid, values=values, names=tuple(names)).write_csv(
        chain_dir / "densities.csv"
    )

    if args.truth:
        truths = lmio.read_truth_csv(args.truth)
        if len(truths) != summary.n_groups:
            raise ConfigError(
                f"truth table has {len(truths)} groups, chain has {summary.n_groups}"
            )
        with open(chain_dir / "kl.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["group", "kl", "clamped"])
            kls = []
            for j, true_m in enumerate(truths):
                kl, clamped = kl_to_truth(
                    groups[j], true_m.density(summary.grid), summary.grid
                )
                kls.append(kl)
                writer.writerow([str(j), lmio.fmt_float(kl), str(int(clamped))])
            writer.writerow(["mean", lmio.fmt_float(float(np.mean(kls))), ""])
    print(f"summary written to {chain_dir}")
    return 0


def _cmd_prior_analyze(args: argparse.Namespace) -> int:
    cfg = _load(args)
    if args.draws < 4:
        raise ConfigError("prior-analyze needs at least 4 draws")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    phi, alpha, k = cfg.phi, args.alpha, args.atoms
    exact = truncated_corm_moments(phi, alpha, k)

    def table(path: Path, header: list[str], rows: list[list[str]]) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)

    header = ["quantity", "formula", "estimate", "se", "z"]

    mean_f, mixed_f = corm_moments(phi, alpha)
    est_mean, est_mixed = mc_corm_moments(phi, alpha, k, args.draws, rng)
    table(out / "corm_moments.csv", header, [
        ["mean", lmio.fmt_float(mean_f), lmio.fmt_float(est_mean.value),
         lmio.fmt_float(est_mean.se), lmio.fmt_float(est_mean.z_score(mean_f))],
        ["mixed", lmio.fmt_float(mixed_f), lmio.fmt_float(est_mixed.value),
         lmio.fmt_float(est_mixed.se), lmio.fmt_float(est_mixed.z_score(mixed_f))],
    ])

    h_corr = 4
    spec_iid = PriorSpec(
        n_factors=h_corr, n_atoms=k, phi=phi,
        loadings=IidGammaLoadings(psi=args.psi), alpha_a=alpha,
    )
    corr_est = mc_group_correlation(spec_iid, args.draws, rng)
    corrected = corr_iid_scores(
        h_corr, args.psi, exact.mean, exact.variance, exact.cross_covariance
    )
    printed = corr_iid_scores(
        h_corr, args.psi, exact.mean, exact.variance, exact.cross_covariance,
        mean_numerator=True,
    )
    table(out / "corr_iid.csv", header, [
        ["corrected", lmio.fmt_float(corrected), lmio.fmt_float(corr_est.value),
         lmio.fmt_float(corr_est.se), lmio.fmt_float(corr_est.z_score(corrected))],
        ["printed", lmio.fmt_float(printed), lmio.fmt_float(corr_est.value),
         lmio.fmt_float(corr_est.se), lmio.fmt_float(corr_est.z_score(printed))],
    ])

    mgp = MgpLoadings(a1=cfg.a1, a2=cfg.a2, nu=cfg.nu)
    spec_mgp = PriorSpec(
        n_factors=h_corr, n_atoms=k, phi=phi, loadings=mgp, alpha_a=alpha,
    )
    mgp_est = mc_group_correlation(spec_mgp, args.draws, rng)
    rows = []
    for label, flag in (("corrected", False), ("printed", True)):
        cov, var = mgp_cov_terms(
            cfg.a1, cfg.a2, cfg.nu, h_corr,
            second_moment=exact.second_moment, mixed_moment=exact.mixed_moment,
            mean=exact.mean, uncorrected_mean_term=flag,
        )
        corr = cov / var
        rows.append([label, lmio.fmt_float(corr), lmio.fmt_float(mgp_est.value),
                     lmio.fmt_float(mgp_est.se), lmio.fmt_float(mgp_est.z_score(corr))])
    table(out / "mgp_corr.csv", header, rows)

    ratio_rows = jump_ratio_study(
        spec_iid, [1, 2, 4, 8, 16, 32], max(args.draws // 5, 4), rng
    )
    table(
        out / "jump_ratio.csv",
        ["n_factors", "mean", "mean_se", "variance", "variance_se",
         "var_ci_lo", "var_ci_hi"],
        [
            [str(r.n_factors), lmio.fmt_float(r.mean), lmio.fmt_float(r.mean_se),
             lmio.fmt_float(r.variance), lmio.fmt_float(r.variance_se),
             lmio.fmt_float(r.variance_ci[0]), lmio.fmt_float(r.variance_ci[1])]
            for r in ratio_rows
        ],
    )

    exp_est = expectation_mc(spec_iid, max(args.draws // 5, 1), rng)
    table(out / "expectation.csv", header, [
        ["normalized_mass", lmio.fmt_float(alpha), lmio.fmt_float(exp_est.value),
         lmio.fmt_float(exp_est.se), lmio.fmt_float(exp_est.z_score(alpha))],
    ])

    lmio.write_json(out / "meta.json", {
        "stage": "prior-analyze", "config": cfg.resolved(),
        "draws": args.draws, "atoms": k, "alpha": alpha, "psi": args.psi,
    })
    print(f"prior analysis tables written to {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
