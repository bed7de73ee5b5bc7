"""Experiment runner: generate -> fit -> outage curves -> sweeps.

Every artifact embeds the resolved-config hash and the master seed, and all
randomness flows from named substreams of the master seed, so a run is
byte-reproducible.  Exit codes: 0 full success, 1 configuration or I/O
error, 2 partial failure (some fitting scheme failed, the rest completed).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import em as em_mod
from .channel import (ChannelModelParams, ChannelSampleSet, FieldHypothesis,
                      PathParams, draw_scenario, load_samples_text, mean_channel,
                      sample_channels, save_samples_text)
from .config import (ConfigError, ExperimentConfig, default_r_th_grid,
                     hash_config, load_config_file, resolve_config)
from .outage import mc_outage_curve, outage_probability_analytic, OPQuery
from .steering import NEAR, ArrayGeometry

FIT_SCHEMES = ("proposed", "far", "near")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2


# ---------------------------------------------------------------------------
# Seed substreams: one child per named role, one grandchild tree per sweep point
# ---------------------------------------------------------------------------

_ROLES = ("generate", "fit", "mc")


def _role_rng(seed: int, role: str) -> np.random.Generator:
    children = np.random.SeedSequence(seed).spawn(len(_ROLES))
    return np.random.default_rng(children[_ROLES.index(role)])


def _role_seed(seed: int, role: str) -> int:
    children = np.random.SeedSequence(seed).spawn(len(_ROLES))
    return int(children[_ROLES.index(role)].generate_state(1, dtype=np.uint64)[0])


# Sweep points all reuse the master seed: the scenario randomness is then
# shared across points and only the swept knob differs, which is what makes
# per-axis comparisons meaningful.  Each point still runs independently and
# deterministically (role substreams derive from the point's own config).


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.config_hash, "seed": cfg.seed}


# ---------------------------------------------------------------------------
# Parameter-set (de)serialization shared by truth and fitted files
# ---------------------------------------------------------------------------

def _params_to_dict(params: ChannelModelParams, labels: FieldHypothesis) -> dict:
    return {
        "sigma2": params.sigma2,
        "paths": [
            {"beta_real": p.beta.real, "beta_imag": p.beta.imag, "theta": p.theta,
             "phi": p.phi, "r": p.r, "label": int(z)}
            for p, z in zip(params.paths, labels.labels)
        ],
    }


def _params_from_dict(blob: dict) -> tuple[ChannelModelParams, FieldHypothesis]:
    paths = [PathParams(beta=complex(p["beta_real"], p["beta_imag"]), theta=p["theta"],
                        phi=p["phi"], r=p["r"]) for p in blob["paths"]]
    labels = FieldHypothesis(tuple(int(p["label"]) for p in blob["paths"]))
    return ChannelModelParams(paths=paths, sigma2=blob["sigma2"]), labels


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def run_generate(cfg: ExperimentConfig, out_dir: Path) -> dict:
    "Draw a scenario, synthesize channel samples, write both with provenance."
    out_dir.mkdir(parents=True, exist_ok=True)
    prov = _provenance(cfg)
    _write_json(out_dir / "config.resolved.json",
                {"config_hash": cfg.config_hash, **cfg.resolved})

    rng = _role_rng(cfg.seed, "generate")
    params, labels = draw_scenario(cfg.scenario, rng)
    samples = sample_channels(cfg.scenario.geometry, params, labels,
                              cfg.scenario.num_samples, rng)
    save_samples_text(out_dir / "samples.csv", samples, prov)
    _write_json(out_dir / "truth.json", {**prov, **_params_to_dict(params, labels)})
    return {"samples": out_dir / "samples.csv", "truth": out_dir / "truth.json"}


def _load_run_inputs(cfg: ExperimentConfig, out_dir: Path):
    samples, _ = load_samples_text(out_dir / "samples.csv")
    blob = json.loads((out_dir / "truth.json").read_text())
    params, labels = _params_from_dict(blob)
    return samples, params, labels


def _fit_proposed(cfg: ExperimentConfig, samples: ChannelSampleSet, sigma2: float,
                  out_dir: Path, prov: dict):
    geom = cfg.scenario.geometry
    em_cfg = cfg.em
    em_cfg.seed = _role_seed(cfg.seed, "fit")
    result = em_mod.em_fit(geom, samples, cfg.scenario.num_paths, em_cfg, sigma2=sigma2)
    payload = {**prov, "scheme": "proposed", "loglik": result.loglik,
               "restart": result.restart,
               **_params_to_dict(result.theta_hat, result.map_labels)}
    _write_json(out_dir / "proposed.json", payload)
    em_mod.write_em_report(out_dir / "proposed_report.txt", result, prov)
    em_mod.write_em_trace(out_dir / "proposed_trace.csv", result, prov)


def _fit_baseline(cfg: ExperimentConfig, samples: ChannelSampleSet, sigma2: float,
                  scheme: str, out_dir: Path, prov: dict):
    geom = cfg.scenario.geometry
    grids = cfg.baselines
    if scheme == "far":
        dictionary = bl.build_far_dictionary(
            geom, grids.far_n_theta, grids.far_n_phi,
            theta_range=cfg.scenario.theta_range, phi_range=cfg.scenario.phi_range)
    else:
        dictionary = bl.build_polar_dictionary(
            geom, grids.polar_n_theta, grids.polar_n_phi, grids.polar_n_dist,
            r_min=cfg.scenario.r_min, theta_range=cfg.scenario.theta_range,
            phi_range=cfg.scenario.phi_range)
    result = bl.somp_fit(samples, dictionary, cfg.scenario.num_paths, sigma2=sigma2,
                         refine=grids.refine, geom=geom)
    payload = {**prov, "scheme": scheme, "atom_indices": result.atom_indices,
               "rank_deficient": result.rank_deficient,
               **_params_to_dict(result.params, result.labels)}
    _write_json(out_dir / f"{scheme}.json", payload)


def run_fit(cfg: ExperimentConfig, out_dir: Path) -> dict:
    """Fit every enabled scheme; failures are recorded per scheme and do not
    stop the others."""
    samples, truth_params, _ = _load_run_inputs(cfg, out_dir)
    fit_dir = out_dir / "fit"
    fit_dir.mkdir(exist_ok=True)
    prov = _provenance(cfg)
    status = {}
    for scheme in (s for s in cfg.schemes if s in FIT_SCHEMES):
        try:
            if scheme == "proposed":
                _fit_proposed(cfg, samples, truth_params.sigma2, fit_dir, prov)
            else:
                _fit_baseline(cfg, samples, truth_params.sigma2, scheme, fit_dir, prov)
            status[scheme] = "ok"
        except Exception as err:  # noqa: BLE001 - per-scheme isolation
            status[scheme] = f"error: {err}"
            (fit_dir / f"{scheme}.error.txt").write_text(traceback.format_exc())
    _write_json(fit_dir / "fit_status.json", {**prov, "status": status})
    return status


def _resolve_r_grid(cfg: ExperimentConfig, truth_params: ChannelModelParams,
                    truth_labels: FieldHypothesis) -> np.ndarray:
    if cfg.op.r_th_grid is not None:
        return np.asarray(cfg.op.r_th_grid, dtype=float)
    geom = cfg.scenario.geometry
    mean = mean_channel(geom, truth_params, truth_labels)
    mean_power = float(np.vdot(mean, mean).real)
    return default_r_th_grid(mean_power, truth_params.sigma2, geom.n_elements,
                             cfg.op.tx_power_w, cfg.op.noise_var_w, cfg.op.r_th_points)


def run_op(cfg: ExperimentConfig, out_dir: Path) -> dict:
    """Outage curves per scheme: closed form from each scheme's fitted
    parameters, plus one Monte Carlo reference streamed from the ground
    truth when the mc scheme is enabled."""
    samples, truth_params, truth_labels = _load_run_inputs(cfg, out_dir)
    geom = cfg.scenario.geometry
    r_grid = _resolve_r_grid(cfg, truth_params, truth_labels)

    curves: dict[str, np.ndarray] = {}
    status = {}
    mean_truth = mean_channel(geom, truth_params, truth_labels)
    curves["truth"] = np.array([
        outage_probability_analytic(mean_truth, truth_params.sigma2,
                                    OPQuery(r, cfg.op.tx_power_w, cfg.op.noise_var_w))
        for r in r_grid])
    status["truth"] = "ok"

    for scheme in (s for s in cfg.schemes if s in FIT_SCHEMES):
        path = out_dir / "fit" / f"{scheme}.json"
        if not path.exists():
            status[scheme] = "error: missing fit artifact"
            continue
        params, labels = _params_from_dict(json.loads(path.read_text()))
        mean = mean_channel(geom, params, labels)
        curves[scheme] = np.array([
            outage_probability_analytic(mean, truth_params.sigma2,
                                        OPQuery(r, cfg.op.tx_power_w, cfg.op.noise_var_w))
            for r in r_grid])
        status[scheme] = "ok"

    op_mc = None
    if "mc" in cfg.schemes:
        rng = _role_rng(cfg.seed, "mc")
        op_mc = mc_outage_curve(geom, truth_params, truth_labels, r_grid,
                                cfg.op.tx_power_w, cfg.op.noise_var_w,
                                cfg.op.mc_samples, rng)

    out_path = out_dir / "op_curves.csv"
    prov = _provenance(cfg)
    with open(out_path, "w", newline="") as fh:
        for key, value in prov.items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(["scheme", "R_th", "op_analytic", "op_mc", "n_samples", "seed"])
        for scheme, curve in curves.items():
            for j, r in enumerate(r_grid):
                mc_val = repr(float(op_mc[j])) if op_mc is not None else ""
                n_mc = cfg.op.mc_samples if op_mc is not None else ""
                writer.writerow([scheme, repr(float(r)), repr(float(curve[j])),
                                 mc_val, n_mc, cfg.seed])
    return {"path": out_path, "status": status, "r_grid": r_grid,
            "curves": curves, "op_mc": op_mc}


def load_op_curves(path) -> dict:
    "Parse an op_curves.csv back into per-scheme arrays."
    schemes: dict[str, dict[str, list[float]]] = {}
    with open(path) as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(rows)
    for row in reader:
        entry = schemes.setdefault(row["scheme"], {"r_th": [], "analytic": [], "mc": []})
        entry["r_th"].append(float(row["R_th"]))
        entry["analytic"].append(float(row["op_analytic"]))
        entry["mc"].append(float(row["op_mc"]) if row["op_mc"] else np.nan)
    return {k: {kk: np.array(vv) for kk, vv in v.items()} for k, v in schemes.items()}


def _apply_sweep_value(cfg: ExperimentConfig, axis: str, value: float, seed: int) -> ExperimentConfig:
    raw = json.loads(json.dumps(cfg.resolved))  # deep copy
    raw.pop("config_hash", None)
    raw["seed"] = seed
    raw.pop("sweep")
    if axis == "n1":
        raw["scenario"]["n1"] = int(value)
        # grid sizes track the array size unless explicitly pinned
        for key in ("far_n_theta", "far_n_phi", "polar_n_theta", "polar_n_phi"):
            raw["baselines"].pop(key)
    else:
        raw["scenario"][axis] = value
    return resolve_config(raw)


def run_sweep(cfg: ExperimentConfig, out_dir: Path) -> int:
    """Run the full pipeline per sweep value and summarize the integrated
    absolute deviation of each scheme's curve from the MC reference."""
    if cfg.sweep is None:
        raise ConfigError("sweep requested but the config has no sweep section")
    if "mc" not in cfg.schemes:
        raise ConfigError("sweep needs the mc scheme as the deviation reference")
    out_dir.mkdir(parents=True, exist_ok=True)
    axis, values = cfg.sweep.axis, cfg.sweep.values
    summary_rows = []
    any_failed = False
    for value in values:
        seed = cfg.seed
        sub_cfg = _apply_sweep_value(cfg, axis, value, seed)
        point_dir = out_dir / f"{axis}_{value:g}"
        run_generate(sub_cfg, point_dir)
        status = run_fit(sub_cfg, point_dir)
        if any(v != "ok" for v in status.values()):
            any_failed = True
        op_info = run_op(sub_cfg, point_dir)
        r_grid, op_mc = op_info["r_grid"], op_info["op_mc"]
        for scheme, curve in op_info["curves"].items():
            deviation = float(np.trapezoid(np.abs(curve - op_mc), r_grid))
            summary_rows.append([axis, value, scheme, deviation,
                                 sub_cfg.config_hash, seed])
    summary = out_dir / "sweep_summary.csv"
    with open(summary, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg.config_hash}\n# seed={cfg.seed}\n")
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "scheme", "deviation", "config_hash", "seed"])
        for row in summary_rows:
            writer.writerow([row[0], repr(float(row[1])), row[2], repr(row[3]),
                             row[4], row[5]])
    return EXIT_PARTIAL if any_failed else EXIT_OK


def run_verify(out_dir: Path) -> bool:
    """Re-derive the config hash and check every artifact that embeds one."""
    cfg_path = out_dir / "config.resolved.json"
    ok = True
    if not cfg_path.exists():
        print(f"verify: missing {cfg_path}")
        return False
    blob = json.loads(cfg_path.read_text())
    declared = blob.pop("config_hash", None)
    recomputed = hash_config(blob)
    if declared != recomputed:
        print(f"verify: config hash mismatch: declared {declared}, recomputed {recomputed}")
        ok = False

    def embedded_hash(path: Path) -> str | None:
        if path.suffix == ".json":
            try:
                return json.loads(path.read_text()).get("config_hash")
            except json.JSONDecodeError:
                return None
        with open(path) as fh:
            for line in fh:
                if line.startswith("# config_hash="):
                    return line.strip().split("=", 1)[1]
                if not line.startswith("#"):
                    break
        return None

    for path in sorted(out_dir.rglob("*")):
        if path.is_dir() or path.name == "config.resolved.json":
            continue
        if path.suffix not in (".json", ".csv", ".txt"):
            continue
        found = embedded_hash(path)
        if found is None:
            continue
        if found != recomputed:
            print(f"verify: {path} embeds hash {found}, expected {recomputed}")
            ok = False
    if ok:
        print(f"verify: all artifacts in {out_dir} match hash {recomputed}")
    return ok


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nearfar",
        description="near-far field channel experiments: generation, fitting, outage curves")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_config in (("generate", True), ("fit", True), ("op", True),
                               ("sweep", True), ("verify", False)):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("--config", required=True, help="path to the JSON config")
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
            p.add_argument("--profile", choices=("paper", "desk"), default=None,
                           help="override the config profile")
        p.add_argument("--out", default=None, help="output directory")
    return parser


def _resolve_from_args(args) -> tuple[ExperimentConfig, Path]:
    raw = load_config_file(args.config)
    cfg = resolve_config(raw, profile_override=args.profile, seed_override=args.seed)
    out = args.out or cfg.output_dir
    if out is None:
        raise ConfigError("no output directory: set output_dir in the config or pass --out")
    return cfg, Path(out)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            if args.out is None:
                raise ConfigError("verify needs --out pointing at a run directory")
            return EXIT_OK if run_verify(Path(args.out)) else EXIT_CONFIG

        cfg, out_dir = _resolve_from_args(args)
        if args.command == "generate":
            run_generate(cfg, out_dir)
            return EXIT_OK
        if args.command == "fit":
            status = run_fit(cfg, out_dir)
            failed = [k for k, v in status.items() if v != "ok"]
            if failed and len(failed) == len(status):
                print(f"fit: every scheme failed: {status}", file=sys.stderr)
                return EXIT_CONFIG
            return EXIT_PARTIAL if failed else EXIT_OK
        if args.command == "op":
            info = run_op(cfg, out_dir)
            failed = [k for k, v in info["status"].items() if v != "ok"]
            return EXIT_PARTIAL if failed else EXIT_OK
        if args.command == "sweep":
            return run_sweep(cfg, out_dir)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
