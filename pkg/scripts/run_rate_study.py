"""Run one of the bundled rate-study configs and print the summary.

Usage:  python scripts/run_rate_study.py [configs/rate_linear.json]

Equivalent to `mvavg rate-study --config <path>`, kept as a script so the
sweep is easy to tweak inline (grid, particle count, seeds) while exploring.
"""
import sys

from mvavg.study import load_config, run_rate_study, write_report

if __name__ == "__main__":
    path = sys.argv[1] if len(sys.argv) > 1 else "configs/rate_linear.json"
    cfg = load_config(path)
    report = run_rate_study(cfg)
    paths = write_report(report, cfg.out_dir)
    print(open(paths["summary"]).read())
    raise SystemExit(0 if report.passed else 4)
