"""Command-line driver.

Every command writes its tables and a ``manifest.json`` into ``--out``.
Outputs depend only on the configuration and seed, never on ``--threads``.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    average_ceq_ratio,
    area_report,
    energy_curves,
    mac_energy,
    run_onoff_error_sweep,
    run_sigma_mac_mc,
    EnergyReport,
    VariationReport,
)
from .bnn import MacroConfig, ModelFormatError, evaluate_accuracy, load_model
from .config import CONFIG_ENV, RunConfig, load_config
from .device import VariationSpec
from .errors import ConfigError, DisturbRisk
from .idx import IdxFormatError, read_images, read_labels
from .macroarray import (
    MacroArray,
    WriteAudit,
    equivalent_capacitance,
    mac_evaluate,
    program_array,
)
from .report import write_csv, write_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DISTURB = 3

CSV_HELP = """\
output tables (all floats carry 17 significant digits):
  mac-sweep       mac_sweep.csv: M, v_scl_ideal, v_scl_nonideal, c_eq, energy
  variation       sigma_mac.csv: p, M, sigma_c, sigma_mac, sigma_mac_theory, trials, seed
                  onoff_error.csv: p, M, on_off_ratio, mean_abs_error, q_below_one_flip, trials, seed
  energy-compare  energy_curves.csv: M, p, c_eq_proposed, c_eq_sram, energy_proposed, energy_sram, ratio
  bnn             accuracy.csv: sigma_c, seed, accuracy
  write-sim       write_trace.csv: row, phase, v_gs_magnitude, count

exit codes: 0 success, 2 configuration or input error, 3 write disturb audit failure
"""


def _manifest(out: Path, command: str, cfg: RunConfig, **extra):
    doc = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.echo(),
        "config_hash": cfg.digest(),
    }
    doc.update(extra)
    write_json(out / "manifest.json", doc)


def cmd_mac_sweep(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    n = cfg.rows
    params = cfg.params()
    arr = MacroArray.sample(n, 1, params, cfg.variation(), cfg.c_m, cfg.c_parasitic)
    arr = program_array(arr, np.ones((n, 1), dtype=np.int8))
    nominal = np.full((n, 1), cfg.c_m)
    rows = []
    for m in range(n + 1):
        bits = (np.arange(n) < m).astype(np.int8)
        ideal = mac_evaluate(arr, bits, "ideal", caps=nominal).v_scl[0]
        nonideal = mac_evaluate(arr, bits, "divider").v_scl[0]
        c_eq = equivalent_capacitance(m, n, cfg.c_m)
        rows.append((m, ideal, nonideal, c_eq, mac_energy(c_eq, cfg.v_dd)))
    write_csv(out / "mac_sweep.csv", ("M", "v_scl_ideal", "v_scl_nonideal", "c_eq", "energy"), rows)
    _manifest(out, "mac-sweep", cfg)
    return out


def cmd_variation(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    if cfg.trials < 10_000:
        raise ConfigError(f"variation studies need at least 10^4 trials (got {cfg.trials})")
    sig_rows, reports = [], []
    for sigma_c in cfg.sigma_c_grid:
        spec = VariationSpec(sigma_c, 0.0, math.inf, cfg.seed)
        rep = run_sigma_mac_mc(spec, cfg.rows, cfg.p_grid, cfg.trials, cfg.threads)
        sig_rows.extend(rep.rows())
        reports.append(rep.to_dict())
    write_csv(out / "sigma_mac.csv", VariationReport.header, sig_rows)
    spec = VariationSpec(cfg.sigma_c, cfg.sigma_r, None, cfg.seed)
    err = run_onoff_error_sweep(spec, cfg.on_off_ratios, cfg.rows, cfg.p_grid, cfg.trials, cfg.threads)
    err_rows = [row for rep in err for row in rep.rows()]
    write_csv(out / "onoff_error.csv", err[0].header, err_rows)
    write_json(out / "variation.json", {"sigma_mac": reports, "onoff_error": [r.to_dict() for r in err]})
    _manifest(out, "variation", cfg)
    return out


def cmd_energy_compare(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    n = cfg.rows
    write_csv(out / "energy_curves.csv",
              ("M", "p", "c_eq_proposed", "c_eq_sram", "energy_proposed", "energy_sram", "ratio"),
              energy_curves(n, cfg.c_m, cfg.v_dd))
    half = EnergyReport.at(n // 2, n, cfg.c_m, cfg.v_dd) if n >= 2 else None
    area = area_report()
    summary = {
        "n": n,
        "c_m": cfg.c_m,
        "v_dd": cfg.v_dd,
        "ratio_at_half": None if half is None else half.ratio,
        "average_ratio": average_ceq_ratio(n),
        "average_ratio_exact": f"{n - 1}/{3 * n}",
        "area": {**area, "transistor_ratio": str(area["transistor_ratio"])},
    }
    write_json(out / "energy_summary.json", summary)
    _manifest(out, "energy-compare", cfg)
    return out


def cmd_bnn(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    for key in ("model", "images", "labels"):
        path = getattr(cfg, key)
        if path is None:
            raise ConfigError(f"bnn needs a {key} path (--{key} or [bnn] {key})")
        if not Path(path).is_file():
            raise ConfigError(f"{key} file {path} not found")
    model = load_model(cfg.model)
    images = read_images(cfg.images)
    labels = read_labels(cfg.labels)
    if len(images) != len(labels):
        raise ConfigError(f"{len(images)} images but {len(labels)} labels")
    macro = MacroConfig(cfg.rows, cfg.cols, cfg.params(), cfg.c_m, cfg.c_parasitic)
    spec = VariationSpec(0.0, cfg.sigma_r, cfg.on_off_ratio if cfg.on_off_ratio is not None else math.inf,
                         cfg.seed)
    table = evaluate_accuracy(model, images, labels, cfg.bnn_sigma_c_grid, cfg.bnn_trials, spec, macro,
                              threads=cfg.threads)
    table.write(out / "accuracy.csv")
    summary = {str(k): {"mean": m, "std": s} for k, (m, s) in table.summary().items()}
    _manifest(out, "bnn", cfg, sigma_mode=model.sigma_mode, reference_accuracy=table.reference_accuracy,
              summary=summary)
    return out


def _read_weight_matrix(path: Path) -> np.ndarray:
    text = path.read_text()
    if text.lstrip().startswith("{"):
        return MacroArray.from_json(text).weights
    rows = [line.replace(",", " ").split() for line in text.splitlines() if line.strip()]
    try:
        return np.array([[int(v) for v in r] for r in rows], dtype=np.int8)
    except ValueError:
        raise ConfigError(f"{path}: weight matrix must hold 0/1 entries") from None


def cmd_write_sim(cfg: RunConfig, weights_path: str | None = None, corrupt_row: int | None = None) -> Path:
    out = Path(cfg.out)
    if weights_path is not None:
        w = _read_weight_matrix(Path(weights_path))
        if w.shape != (cfg.rows, cfg.cols):
            raise ConfigError(f"weight matrix {w.shape} does not match geometry {(cfg.rows, cfg.cols)}")
    else:
        w = np.random.default_rng(cfg.seed).integers(0, 2, (cfg.rows, cfg.cols), dtype=np.int8)
    arr = MacroArray.blank(cfg.rows, cfg.cols, cfg.params(), cfg.c_m, cfg.c_parasitic)
    audit = WriteAudit()
    hook = None
    if corrupt_row is not None:
        vw = cfg.v_write

        def hook(row, phase_no, phase):
            # test hook: drive one unselected row's wordlines into the forbidden band
            if row == 0 and phase_no == 1 and corrupt_row != 0:
                phase.v_wl[corrupt_row] = 0.75 * vw
                phase.v_wlb[corrupt_row] = 0.75 * vw
            return phase

    try:
        programmed = program_array(arr, w, audit, hook)
    finally:
        trace = [(r, ph, mag, cnt) for r, ph, hist in audit.trace for mag, cnt in sorted(hist.items())]
        write_csv(out / "write_trace.csv", ("row", "phase", "v_gs_magnitude", "count"), trace)
    readback_ok = bool(np.array_equal(programmed.weights, w))
    hist = {f"{k:.17g}": v for k, v in sorted(audit.magnitudes.items())}
    write_json(out / "write_audit.json", {
        "magnitudes": hist,
        "forbidden": audit.forbidden,
        "readback_ok": readback_ok,
        "v_write": cfg.v_write,
        "disturb_margin": cfg.params().disturb_margin,
    })
    (out / "array.json").write_text(programmed.to_json() + "\n")
    _manifest(out, "write-sim", cfg)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fecim",
        description="Behavioral simulator of a FeFET 2T1C charge-domain compute-in-memory macro.",
        epilog=CSV_HELP + f"\ndefault config path may be set with ${CONFIG_ENV}",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"INI config file (default: ${CONFIG_ENV})")
    common.add_argument("--seed", type=int)
    common.add_argument("--trials", type=int, help="Monte Carlo trials (bnn: seeds per sigma_c)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("mac-sweep", parents=[common], help="V_ScL and C_EQ for M = 0..N on one column")
    sub.add_parser("variation", parents=[common], help="sigma_MAC and on/off-ratio error Monte Carlo")
    sub.add_parser("energy-compare", parents=[common], help="C_EQ curves against the SRAM baseline")
    p = sub.add_parser("bnn", parents=[common], help="accuracy vs capacitor mismatch")
    p.add_argument("--model", help="model manifest (JSON)")
    p.add_argument("--images", help="IDX image file")
    p.add_argument("--labels", help="IDX label file")
    p = sub.add_parser("write-sim", parents=[common], help="program an array and audit gate biases")
    p.add_argument("--weights", help="0/1 matrix (text) or array JSON dump; random if omitted")
    p.add_argument("--corrupt-row", type=int, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "out": args.out, "threads": args.threads}
    if args.trials is not None:
        overrides["bnn_trials" if args.command == "bnn" else "trials"] = args.trials
    for key in ("model", "images", "labels"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    try:
        cfg = load_config(args.config, **overrides)
        if args.command == "mac-sweep":
            out = cmd_mac_sweep(cfg)
        elif args.command == "variation":
            out = cmd_variation(cfg)
        elif args.command == "energy-compare":
            out = cmd_energy_compare(cfg)
        elif args.command == "bnn":
            out = cmd_bnn(cfg)
        else:
            out = cmd_write_sim(cfg, args.weights, args.corrupt_row)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelFormatError, IdxFormatError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DisturbRisk as exc:
        print(f"write audit failed: {exc}", file=sys.stderr)
        return EXIT_DISTURB
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
