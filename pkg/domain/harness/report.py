"""统计的文本报告与 key=value 机读格式（schema 1，不含墙钟时间）。"""

import math

from .types import STATS_SCHEMA, Stats


def _rate(ok: int, total: int) -> tuple[float, float]:
    if total == 0:
        return 0.0, 0.0
    p = ok / total
    return p, math.sqrt(p * (1 - p) / total)


def _mean(total: int, count: int) -> float:
    return total / count if count else 0.0


def summary(stats: Stats) -> dict[str, object]:
    load, load_err = _rate(stats.loads_succeeded, stats.loads_attempted)
    attach, attach_err = _rate(stats.attaches_succeeded, stats.attaches_attempted)
    executed, executed_err = _rate(stats.executed_programs, stats.unique_programs)
    top = sorted(stats.rule_histogram.items(), key=lambda kv: (-kv[1], kv[0]))[:5]
    out: dict[str, object] = {
        "schema": STATS_SCHEMA,
        "iterations": stats.iterations,
        "programs_generated": stats.programs_generated,
        "loads_attempted": stats.loads_attempted,
        "loads_succeeded": stats.loads_succeeded,
        "load_success_rate": f"{load:.4f}",
        "load_success_stderr": f"{load_err:.4f}",
        "attaches_attempted": stats.attaches_attempted,
        "attaches_succeeded": stats.attaches_succeeded,
        "attach_success_rate": f"{attach:.4f}",
        "attach_success_stderr": f"{attach_err:.4f}",
        "unique_programs": stats.unique_programs,
        "executed_programs": stats.executed_programs,
        "executed_unique_rate": f"{executed:.4f}",
        "executed_unique_stderr": f"{executed_err:.4f}",
        "inputs_executed": stats.inputs_executed,
        "insns_mean": f"{_mean(stats.insns_total, stats.loads_succeeded):.2f}",
        "insns_max": stats.insns_max,
        "helpers_mean": f"{_mean(stats.helpers_total, stats.loads_succeeded):.2f}",
        "helpers_max": stats.helpers_max,
        "maps_mean": f"{_mean(stats.maps_total, stats.loads_succeeded):.2f}",
        "maps_max": stats.maps_max,
        "distinct_helpers": len(stats.helpers_used),
        "coverage": stats.coverage,
        "corpus_size": stats.corpus_size,
        "top_rules": ",".join(f"{rule}:{count}" for rule, count in top),
        "coverage_curve": ",".join(f"{it}:{cov}" for it, cov in stats.coverage_curve),
    }
    for rule, count in sorted(stats.rule_histogram.items()):
        out[f"rule.{rule}"] = count
    for oracle, count in sorted(stats.findings.items()):
        out[f"oracle.{oracle}"] = count
    return out


def render_kv(stats: Stats) -> str:
    return "".join(f"{key}={value}\n" for key, value in summary(stats).items())


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key] = value
    return out


def render_text(stats: Stats) -> str:
    s = summary(stats)
    lines = [
        f"iterations        {s['iterations']}",
        f"load success      {float(s['load_success_rate']) * 100:.1f}% ± {float(s['load_success_stderr']) * 100:.1f}%"
        f"  ({s['loads_succeeded']}/{s['loads_attempted']})",
        f"attach success    {float(s['attach_success_rate']) * 100:.1f}% ± {float(s['attach_success_stderr']) * 100:.1f}%"
        f"  ({s['attaches_succeeded']}/{s['attaches_attempted']})",
        f"executed unique   {float(s['executed_unique_rate']) * 100:.1f}% ± {float(s['executed_unique_stderr']) * 100:.1f}%"
        f"  ({s['executed_programs']}/{s['unique_programs']})",
        "expressiveness    avg / max",
        f"  insns           {s['insns_mean']} / {s['insns_max']}",
        f"  helper calls    {s['helpers_mean']} / {s['helpers_max']}",
        f"  maps            {s['maps_mean']} / {s['maps_max']}",
        f"distinct helpers  {s['distinct_helpers']}",
        f"coverage          {s['coverage']} probes, corpus {s['corpus_size']}",
    ]
    if stats.rule_histogram:
        lines.append("top violated rules")
        lines += [f"  {item}" for item in str(s["top_rules"]).split(",")]
    if stats.findings:
        lines.append("findings")
        lines += [f"  {oracle:<24}{count}" for oracle, count in sorted(stats.findings.items())]
    return "\n".join(lines) + "\n"


def report_stats(stats: Stats) -> tuple[str, str]:
    """人读文本与机读 key=value。"""
    return render_text(stats), render_kv(stats)
