"""Command-line entry point: ``unbiasedwm <subcommand> ...``.

Exit status: 0 on success, 2 on invalid input.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .detect import DEFAULT_GRID, gumbel_scores, replay_and_score
from .generate import DEFAULT_WINDOW, generate, generate_plain, read_transcripts, write_transcripts
from .keyed import CodeHistory, WatermarkKey
from .models import load_model
from .prob import SamplingPolicy, normalize
from .reweight import make_reweighter, verify_unbiased

REWEIGHT_CHOICES = ("delta", "gamma", "soft", "hard", "gumbel")
_FULL = {"soft": "soft_red", "hard": "hard_red", "gumbel": "gumbel_delta"}
_SHORT = {v: k for k, v in _FULL.items()}


def _top_k(text):
    return None if text.lower() in ("none", "0") else int(text)


def _grid(text):
    if text == "default":
        return list(DEFAULT_GRID)
    vals = [float(x) for x in text.replace(",", " ").split()]
    if not vals or any(not 0 <= v <= 1 for v in vals):
        raise argparse.ArgumentTypeError("grid values must lie in [0, 1]")
    return vals


def _ids(text):
    return [int(x) for x in text.replace(",", " ").split()]


def _add_model(p, default="uniform:size=256"):
    p.add_argument("--model", default=default, help="model spec, e.g. uniform:size=256, toy, toy-table")


def _add_watermark(p, reweight_default="delta", multi=False):
    p.add_argument("--key", help="key file (256 hex chars)")
    if multi:
        p.add_argument("--reweight", choices=REWEIGHT_CHOICES, nargs="+", default=None)
    else:
        p.add_argument("--reweight", choices=REWEIGHT_CHOICES, default=reweight_default)
    p.add_argument("--delta-logit", type=float, default=None, help="soft red-list logit shift")
    p.add_argument("--gamma-frac", type=float, default=0.5, help="red-list green fraction")
    p.add_argument("--context-window", type=int, default=DEFAULT_WINDOW)


def _add_policy(p, default_top_k=None):
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--top-k", type=_top_k, default=default_top_k)


def _add_detect(p):
    p.add_argument("--grid", type=_grid, default=list(DEFAULT_GRID), help="comma list of d values or 'default'")
    p.add_argument("--alpha", type=float, default=0.05)


def _add_history(p):
    p.add_argument("--history", choices=("persist", "reset-per-run"), default="persist")
    p.add_argument("--history-file", help="context-code history file (persist mode)")


def _load_key(args, required=True):
    if args.key:
        return WatermarkKey.load(args.key)
    if required:
        raise ValueError("--key is required")
    return None


def _reweighter(args, kind=None):
    kind = _FULL.get(kind or args.reweight, kind or args.reweight)
    return make_reweighter(kind, args.delta_logit, args.gamma_frac)


def _policy(args, temperature=None, top_k=None):
    t = args.temperature if args.temperature is not None else (temperature if temperature is not None else 1.0)
    return SamplingPolicy(t, args.top_k if args.top_k is not None else top_k)


def _emit(text, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _csv_text(rows):
    import io
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


# --- subcommands --------------------------------------------------------------

def cmd_keygen(args):
    key = WatermarkKey.from_seed(args.seed) if args.seed is not None else WatermarkKey.generate()
    key.save(args.out)
    print(f"wrote key {key.fingerprint} to {args.out}")


def cmd_generate(args):
    lm = load_model(args.model)
    policy = _policy(args)
    prompt = _ids(args.prompt) if args.prompt else []
    if any(not 0 <= t < lm.vocab_size for t in prompt):
        raise ValueError("prompt token outside the vocabulary")
    out = []
    if args.plain:
        for r in range(args.n_runs):
            out.append(generate_plain(lm, prompt, args.n_tokens, policy, args.seed + r))
    else:
        key = _load_key(args)
        rw = _reweighter(args)
        persist = args.history == "persist"
        hist = CodeHistory.load(args.history_file) if persist and args.history_file else CodeHistory()
        start = len(hist)
        for r in range(args.n_runs):
            if not persist:
                hist = CodeHistory()
            out.append(generate(lm, key, prompt, args.n_tokens, rw, args.context_window, policy,
                                hist, args.seed + r))
        if persist and args.history_file:
            hist.save(args.history_file, since=start)
    write_transcripts(args.out, out)
    print(f"wrote {len(out)} transcript(s) to {args.out}")


def _detect_setup(args, t):
    """Detector settings: explicit flags win, otherwise the transcript header."""
    model = args.model or t.model
    kind = args.reweight or (_SHORT.get(t.reweight["kind"], t.reweight["kind"]) if t.reweight else "delta")
    m = args.context_window or t.context_window
    policy = _policy(args, t.policy.temperature, t.policy.top_k)
    return model, kind, m, policy


def cmd_detect(args):
    key = _load_key(args)
    transcripts = read_transcripts(args.input)
    if not transcripts:
        raise ValueError("no transcripts in input")
    hist = CodeHistory.load(args.history_file) if args.history_file else None
    models, reports = {}, []
    for t in transcripts:
        spec, kind, m, policy = _detect_setup(args, t)
        if spec not in models:
            models[spec] = load_model(spec)
        if t.key_fingerprint and t.key_fingerprint != key.fingerprint:
            print(f"warning: transcript key {t.key_fingerprint} differs from {key.fingerprint}",
                  file=sys.stderr)
        rep = replay_and_score(t.prompt, t.tokens, models[spec], key, _reweighter(args, kind), m, policy,
                               args.grid, hist, args.alpha)
        rep.metadata.update({"model": spec, "temperature": policy.temperature, "top_k": policy.top_k,
                             "key_fingerprint": key.fingerprint})
        reports.append(rep)
        print(f"score={rep.total_score:.4f} best_d={rep.best_d} p_bound={rep.p_value_bound:.3g} "
              f"detected={rep.detected}")
    _write_reports(reports, args.out)


def _write_reports(reports, out):
    if not out:
        return
    if len(reports) == 1:
        _emit(reports[0].to_text(), out)
    else:
        _emit(json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n", out)


def cmd_detect_gumbel(args):
    key = _load_key(args)
    transcripts = read_transcripts(args.input)
    if not transcripts:
        raise ValueError("no transcripts in input")
    hist = CodeHistory.load(args.history_file) if args.history_file else None
    reports = []
    for t in transcripts:
        lm = load_model(args.model or t.model)
        m = args.context_window or t.context_window
        rep = gumbel_scores(t.prompt, t.tokens, key, lm.vocab_size, m, hist, args.alpha)
        reports.append(rep)
        print(f"score={rep.total_score:.4f} p_bound={rep.p_value_bound:.3g} detected={rep.detected}")
    _write_reports(reports, args.out)


def cmd_verify_unbiased(args):
    rw = _reweighter(args)
    if args.dist:
        dists = [normalize([float(x) for x in args.dist.replace(",", " ").split()])]
    else:
        rng = np.random.default_rng(args.seed)
        dists = [rng.dirichlet(np.ones(args.vocab_size)) for _ in range(args.n_dists)]
    mode = args.mode or ("monte_carlo" if rw.kind == "gumbel_delta" else "exact")
    rows = []
    for i, p in enumerate(dists):
        r = verify_unbiased(rw, p, mode, args.n_samples, args.seed + i)
        rows.append({"index": i, "kind": rw.kind, "mode": mode, "p": " ".join(f"{x:.6g}" for x in p),
                     "mean": " ".join(f"{x:.6g}" for x in r.mean), "max_abs_error": r.max_abs_error,
                     "unbiased": r.passed})
    _emit(_csv_text(rows), args.out)
    worst = max(r["max_abs_error"] for r in rows)
    print(f"{rw.kind}: max abs error {worst:.3g} over {len(rows)} distribution(s); "
          f"{'unbiased' if all(r['unbiased'] for r in rows) else 'BIASED'}",
          file=sys.stderr if not args.out else sys.stdout)


def cmd_undetectability(args):
    cfg = harness.ExperimentConfig(model=args.model, reweight=_reweighter(args).kind,
                                   delta_logit=args.delta_logit, gamma_frac=args.gamma_frac,
                                   temperature=args.temperature or 1.0, top_k=args.top_k,
                                   n_shots=args.n_shots, history_mode=args.history, max_len=args.max_len)
    rep = harness.run_undetectability(cfg)
    rows = [{"strings": " / ".join(" ".join(map(str, s)) for s in case), "watermarked": wm,
             "reference": ref, "abs_error": abs(wm - ref)} for case, wm, ref in rep.rows]
    if args.out:
        harness.write_csv(args.out, rows)
    print(f"{rep.reweight['kind']}: {len(rows)} cases, {rep.n_shots}-shot, history={rep.history_mode}, "
          f"max abs error {rep.max_abs_error:.3g}")


def cmd_attack(args):
    lm = load_model(args.model) if args.model else None
    transcripts = read_transcripts(args.input)
    out = []
    for i, t in enumerate(transcripts):
        V = (lm or load_model(t.model)).vocab_size
        rng = np.random.default_rng(harness.sub_seed(args.seed, "attack", i))
        out.append(t.with_tokens(harness.attack_substitute(t.tokens, args.epsilon, rng, V)))
    write_transcripts(args.out, out)
    print(f"attacked {len(out)} transcript(s) at epsilon={args.epsilon}")


def cmd_auc(args):
    w = harness.read_scores(args.watermarked)
    n = harness.read_scores(args.null)
    a = harness.auc(w, n)
    se = harness.bootstrap_auc_se(w, n, args.n_bootstrap, harness.sub_seed(args.seed, "boot"))
    print(f"auc={a:.6f} stderr={se:.6f}")


def _figure_path(args):
    if args.figure:
        return args.figure
    return str(Path(args.out).with_suffix(".png")) if args.out else None


def cmd_robustness(args):
    from .plotting import robustness_figure
    kinds = args.reweight or ["delta"]
    table, by_kind = [], {}
    for kind in kinds:
        cfg = harness.ExperimentConfig(model=args.model, reweight=_FULL.get(kind, kind),
                                       delta_logit=args.delta_logit, gamma_frac=args.gamma_frac,
                                       key_path=args.key, key_seed=args.seed, context_window=args.context_window,
                                       temperature=args.temperature or 1.0, top_k=args.top_k, grid=args.grid,
                                       alpha=args.alpha, n_trials=args.n_trials, n_tokens=args.n_tokens,
                                       epsilons=args.epsilons, n_bootstrap=args.n_bootstrap,
                                       master_seed=args.seed)
        res = harness.run_robustness(cfg)
        by_kind[kind] = res.rows
        for r in res.rows:
            table.append({"reweight": kind, **r})
            print(f"{kind} eps={r['epsilon']:.2f} auc={r['auc']:.4f} +- {r['stderr']:.4f}")
    if args.out:
        harness.write_csv(args.out, table)
    fig = _figure_path(args)
    if fig:
        robustness_figure(by_kind, fig)


def cmd_sensitivity(args):
    from .plotting import sensitivity_figure
    cfg = harness.ExperimentConfig(model=args.model, key_path=args.key, key_seed=args.seed,
                                   context_window=args.context_window,
                                   temperature=args.temperature or 1.0, top_k=args.top_k, grid=args.grid,
                                   alpha=args.alpha, n_trials=args.n_trials, n_tokens=args.n_tokens,
                                   master_seed=args.seed)
    res = harness.run_sensitivity(cfg)
    for r in res.rows:
        print(f"{r['reweight']:>5} {r['parameter']}={r['value']}{' *' if r['matched'] else ''}: "
              f"{r['mean']:.4f} +- {r['sd']:.4f}")
    s = res.sign_test
    print(f"sign test: gamma drop smaller in {s['gamma_smaller_drop']}/{s['n']} trials, p={s['p_value']:.3g}")
    if args.out:
        harness.write_csv(args.out, res.rows)
    fig = _figure_path(args)
    if fig:
        sensitivity_figure(res.rows, fig)


def cmd_type1(args):
    cfg = harness.ExperimentConfig(model=args.model, reweight=_reweighter(args).kind,
                                   delta_logit=args.delta_logit, gamma_frac=args.gamma_frac,
                                   key_path=args.key, key_seed=args.seed, context_window=args.context_window,
                                   temperature=args.temperature or 1.0, top_k=args.top_k, grid=args.grid,
                                   alpha=args.alpha, n_trials=args.n_trials, n_tokens=args.n_tokens,
                                   master_seed=args.seed)
    res = harness.run_type1(cfg)
    print(f"exceedance {res.exceedances}/{res.n_runs} = {res.rate:.4f} at threshold {res.threshold:.4f}; "
          f"max <P, exp S> = {res.max_constraint:.12f}")
    if args.out:
        harness.write_csv(args.out, [{"run": i, "total_score": float(x)} for i, x in enumerate(res.totals)])


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unbiasedwm", description="Unbiased watermarking on toy language models")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="create a watermark key file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="reproducible key (testing only)")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("generate", help="sample watermarked (or plain) continuations")
    _add_model(p)
    _add_watermark(p)
    _add_policy(p)
    _add_history(p)
    p.add_argument("--prompt", default="", help="prompt token ids")
    p.add_argument("--n-tokens", type=int, default=16)
    p.add_argument("--n-runs", type=int, default=1)
    p.add_argument("--plain", action="store_true", help="no watermark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("detect", help="maximin likelihood-ratio detection on transcripts")
    _add_model(p, default=None)
    _add_watermark(p, reweight_default=None)
    p.set_defaults(context_window=None)
    _add_policy(p)
    _add_detect(p)
    p.add_argument("--history-file", help="history in force before the transcripts")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("detect-gumbel", help="likelihood-agnostic Gumbel score on transcripts")
    _add_model(p, default=None)
    p.add_argument("--key")
    p.add_argument("--context-window", type=int, default=None)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--history-file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect_gumbel)

    p = sub.add_parser("verify-unbiased", help="check a reweighter's code average against P")
    _add_watermark(p)
    p.add_argument("--dist", help="probabilities, e.g. '0.9 0.1'")
    p.add_argument("--vocab-size", type=int, default=4)
    p.add_argument("--n-dists", type=int, default=10)
    p.add_argument("--mode", choices=("exact", "monte_carlo"))
    p.add_argument("--n-samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_unbiased)

    p = sub.add_parser("undetectability", help="exact key-marginal vs plain string probabilities")
    _add_model(p, default="toy-table")
    _add_watermark(p)
    _add_policy(p)
    p.add_argument("--history", choices=("persist", "reset-per-run"), default="persist")
    p.add_argument("--n-shots", type=int, default=1)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_undetectability)

    p = sub.add_parser("attack", help="random token substitution on transcripts")
    _add_model(p, default=None)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("auc", help="Mann-Whitney AUC of two score files")
    p.add_argument("--watermarked", required=True)
    p.add_argument("--null", required=True)
    p.add_argument("--n-bootstrap", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_auc)

    p = sub.add_parser("robustness", help="AUC under substitution attacks (CSV + figure)")
    _add_model(p)
    _add_watermark(p, multi=True)
    _add_policy(p)
    _add_detect(p)
    p.add_argument("--n-trials", type=int, default=512)
    p.add_argument("--n-tokens", type=int, default=16)
    p.add_argument("--epsilons", type=_grid, default=list(harness.DEFAULT_EPSILONS))
    p.add_argument("--n-bootstrap", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--figure")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("sensitivity", help="score under mismatched detector temperature/top-k (CSV + figure)")
    _add_model(p, default="toy")
    p.add_argument("--key")
    p.add_argument("--context-window", type=int, default=DEFAULT_WINDOW)
    _add_policy(p, default_top_k=50)
    _add_detect(p)
    p.add_argument("--n-trials", type=int, default=1000)
    p.add_argument("--n-tokens", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--figure")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("type1", help="null exceedance rate of maximin detection")
    _add_model(p, default="toy")
    _add_watermark(p)
    _add_policy(p)
    _add_detect(p)
    p.add_argument("--n-trials", type=int, default=10_000)
    p.add_argument("--n-tokens", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_type1)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, KeyError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
