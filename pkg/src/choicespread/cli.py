"""Command-line entry points for the estimation-and-diffusion pipeline.

Subcommands: design, survey, simulate-choices, estimate, thresholds,
importance, sample-products, sweep, summarize, report. API keys come from
the environment only; everything else is flags or one JSON config file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .choices import (ingest_choices, random_ground_truth, read_profiles_csv,
                      simulate_choices, write_choices_csv)
from .coding import coding_for_study, load_params_csv, save_params_csv
from .estimation import McmcConfig, fit_hb, point_estimates, save_draws
from .studies import (aa_study, build_design, enumerate_products, load_design,
                      load_study_definition, ps_study, save_design,
                      validate_design)
from .survey import (BackendConfig, HttpChatBackend, MockBackend,
                     aa_prompt_template, administer_survey, ps_prompt_template)
from .sweep import (SweepConfig, emit_report, read_result_rows, run_sweep,
                    sample_products_by_threshold, summarize, write_result_rows)
from .thresholds import ThresholdMatrix, compute_threshold_matrix, save_importance_csv

logger = logging.getLogger(__name__)

BUILTIN_STUDIES = {"ps": ps_study, "aa": aa_study, "PS": ps_study, "AA": aa_study}


def _study_from_arg(spec: str):
    if spec in BUILTIN_STUDIES:
        return BUILTIN_STUDIES[spec]()
    return load_study_definition(spec)


def _template_for(study, include_social_media: bool):
    if study.study_id == "AA":
        return aa_prompt_template(study.attributes)
    return ps_prompt_template(study.attributes, include_social_media)


def cmd_design(args: argparse.Namespace) -> int:
    study = _study_from_arg(args.study)
    design = build_design(study.attributes, args.respondents,
                          study.tasks_per_respondent, study.alts_per_task,
                          seed=args.seed, study_id=study.study_id)
    save_design(design, args.out)
    report = validate_design(design)
    worst = max(report.per_respondent_imbalance.values())
    print(f"wrote design for {design.n_respondents} respondents to {args.out} "
          f"(max per-respondent level imbalance {worst})")
    return 0


def cmd_survey(args: argparse.Namespace) -> int:
    design = load_design(args.design)
    profiles = read_profiles_csv(args.profiles)
    template = _template_for(design.study, args.include_social_media)
    if args.backend == "mock":
        backend = MockBackend([args.mock_reply])
    else:
        config = BackendConfig(endpoint=args.endpoint, model=args.model,
                               temperature=args.temperature,
                               api_key_env=args.api_key_env,
                               max_retries=args.max_retries)
        backend = HttpChatBackend(config, flavor=args.backend)
    dataset, failures = administer_survey(
        backend, template, profiles, design,
        concurrency=args.concurrency, transcript_path=args.transcripts,
        rate_limit_per_s=args.rate_limit)
    write_choices_csv(dataset.choices, args.out)
    print(f"collected {len(dataset.choices)} choices "
          f"({len(failures)} missing cells) -> {args.out}")
    return 0 if not failures else 1


def cmd_simulate_choices(args: argparse.Namespace) -> int:
    design = load_design(args.design)
    if args.params:
        truth = {p.respondent_id: p for p in load_params_csv(args.params)}
    else:
        truth = random_ground_truth(design, seed=args.seed)
        coding = coding_for_study(design.study)
        save_params_csv(list(truth.values()), coding, args.out + ".truth.csv")
    dataset = simulate_choices(design, truth, seed=args.seed)
    write_choices_csv(dataset.choices, args.out)
    print(f"wrote {len(dataset.choices)} simulated choices to {args.out}")
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    design = load_design(args.design)
    dataset = ingest_choices(design, args.choices, args.profiles) \
        if args.profiles else None
    if dataset is None:
        from .choices import ChoiceDataset, read_choices_csv
        dataset = ChoiceDataset(design.study.study_id, design,
                                read_choices_csv(args.choices))
    coding = coding_for_study(design.study)
    cfg = McmcConfig(total_iterations=args.iterations, burn_in=args.burn_in,
                     thinning=args.thinning, seed=args.seed)
    draws = fit_hb(dataset, coding, cfg)
    params = point_estimates(draws)
    save_params_csv(params, coding, args.out)
    if args.draws_prefix:
        save_draws(draws, args.draws_prefix)
    tail = draws.acceptance[cfg.burn_in:]
    print(f"estimated {len(params)} respondents "
          f"(post-burn-in acceptance {tail.mean():.2f}) -> {args.out}")
    return 0


def cmd_thresholds(args: argparse.Namespace) -> int:
    design = load_design(args.design)
    coding = coding_for_study(design.study)
    params = load_params_csv(args.params)
    products = enumerate_products(design.study)
    matrix = compute_threshold_matrix(params, products, coding, pool=args.pool)
    matrix.save_csv(args.out)
    print(f"wrote {matrix.tau.shape[0]}x{matrix.tau.shape[1]} thresholds "
          f"to {args.out}")
    return 0


def cmd_importance(args: argparse.Namespace) -> int:
    design = load_design(args.design)
    coding = coding_for_study(design.study)
    params = load_params_csv(args.params)
    save_importance_csv(params, coding, args.out)
    print(f"wrote importances for {len(params)} respondents to {args.out}")
    return 0


def cmd_sample_products(args: argparse.Namespace) -> int:
    design = load_design(args.design)
    coding = coding_for_study(design.study)
    params = load_params_csv(args.params)
    products = enumerate_products(design.study)
    sample = sample_products_by_threshold(
        products, params, args.intervals, args.per_interval, args.seed, coding)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("product_id\n")
        for p in sample:
            fh.write(p.product_id + "\n")
    print(f"sampled {len(sample)} of {len(products)} products -> {args.out}")
    return 0


def _sweep_config(args: argparse.Namespace) -> SweepConfig:
    raw = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
    overrides = {
        "study_id": args.study_id,
        "human_pool_path": args.human_pool,
        "artificial_pool_path": args.artificial_pool,
        "network_dir": args.networks,
        "llm_label": args.llm_label,
        "seed_rate": args.seed_rate,
        "repetitions": args.repetitions,
        "master_seed": args.seed,
    }
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if args.q:
        raw["q_values"] = tuple(float(q) for q in args.q.split(","))
    if args.policies:
        raw["policies"] = tuple(args.policies.split(","))
    if args.products:
        with open(args.products, encoding="utf-8") as fh:
            ids = [ln.strip() for ln in fh if ln.strip() and ln.strip() != "product_id"]
        raw["product_ids"] = tuple(ids)
    return SweepConfig(**raw)


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _sweep_config(args)
    rows = run_sweep(config, out_csv=None if args.dry_run else args.out,
                     dry_run=args.dry_run)
    if args.dry_run:
        print(f"dry run: {len(rows)} rows would be simulated")
        return 0
    if not args.out:
        write_result_rows(rows, "sweep_results.csv")
        print(f"wrote {len(rows)} rows to sweep_results.csv")
    else:
        print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_summarize(args: argparse.Namespace) -> int:
    rows = read_result_rows(args.rows)
    keys = tuple(args.group_keys.split(","))
    summary = summarize(rows, keys)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(",".join([*keys, "mean_adoption_rate", "ci95_half_width", "n"])
                 + "\n")
        for s in summary:
            fh.write(",".join([*map(str, s.group), repr(s.mean_adoption_rate),
                               repr(s.ci95_half_width), str(s.n)]) + "\n")
    print(f"wrote {len(summary)} summary rows to {args.out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    rows = read_result_rows(args.rows)
    keys = tuple(args.group_keys.split(","))
    paths = emit_report(summarize(rows, keys), args.out_dir)
    print("wrote " + " and ".join(paths))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="choicespread",
        description="Estimate adoption thresholds from conjoint choices and "
                    "run calibrated threshold-contagion sweeps.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="generate a per-respondent task design")
    p.add_argument("--study", required=True,
                   help="'ps', 'aa', or a study-definition JSON path")
    p.add_argument("--respondents", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_design)

    p = sub.add_parser("survey", help="collect choices from a chat backend")
    p.add_argument("--design", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--backend", choices=["openai", "gemini", "mock"],
                   default="mock")
    p.add_argument("--endpoint", default="https://api.openai.com/v1/chat/completions")
    p.add_argument("--model", default="gpt-3.5-turbo")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--api-key-env", default="CHAT_API_KEY")
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--concurrency", type=int, default=1)
    p.add_argument("--rate-limit", type=float, default=None,
                   help="requests per second cap")
    p.add_argument("--transcripts", default=None, help="JSONL transcript path")
    p.add_argument("--include-social-media", action="store_true")
    p.add_argument("--mock-reply", default="Option 1")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_survey)

    p = sub.add_parser("simulate-choices", help="synthesize choices from "
                                                "known or random parameters")
    p.add_argument("--design", required=True)
    p.add_argument("--params", default=None,
                   help="ground-truth parameter CSV (random if omitted)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate_choices)

    p = sub.add_parser("estimate", help="fit the hierarchical Bayes model")
    p.add_argument("--design", required=True)
    p.add_argument("--choices", required=True)
    p.add_argument("--profiles", default=None)
    p.add_argument("--iterations", type=int, default=30_000)
    p.add_argument("--burn-in", type=int, default=10_000)
    p.add_argument("--thinning", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws-prefix", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("thresholds", help="per-(agent, product) thresholds")
    p.add_argument("--design", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--pool", default="human")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_thresholds)

    p = sub.add_parser("importance", help="per-respondent attribute importances")
    p.add_argument("--design", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_importance)

    p = sub.add_parser("sample-products", help="stratified product sample by "
                                               "mean human threshold")
    p.add_argument("--design", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--intervals", type=int, default=6)
    p.add_argument("--per-interval", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample_products)

    p = sub.add_parser("sweep", help="run the diffusion sweep")
    p.add_argument("--config", default=None, help="SweepConfig JSON file")
    p.add_argument("--study-id", default=None)
    p.add_argument("--human-pool", default=None)
    p.add_argument("--artificial-pool", default=None)
    p.add_argument("--networks", default=None, help="edge-list directory")
    p.add_argument("--llm-label", default=None)
    p.add_argument("--q", default=None, help="comma-separated q values")
    p.add_argument("--policies", default=None, help="comma-separated policies")
    p.add_argument("--products", default=None, help="product-id list file")
    p.add_argument("--seed-rate", type=float, default=None)
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--dry-run", action="store_true",
                   help="enumerate rows without simulating")
    p.add_argument("--out", default="sweep_results.csv")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("summarize", help="grouped means with 95% CIs")
    p.add_argument("--rows", required=True)
    p.add_argument("--group-keys", default="q,policy")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_summarize)

    p = sub.add_parser("report", help="summary plus plot-ready CSVs")
    p.add_argument("--rows", required=True)
    p.add_argument("--group-keys", default="q,policy")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
