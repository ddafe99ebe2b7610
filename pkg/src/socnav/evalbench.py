"""Batch evaluation over fixed seeded test suites plus qualitative exports
(trajectory files, attention scores, value-over-action polar maps).

Every policy evaluated with the same (n_cases, base_seed, scenario) sees
bitwise-identical scenarios, so comparisons are paired by construction.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import UnsupportedOperation, UsageError
from .model import ValueNetwork
from .policies import ValuePolicy
from .sim import (EVENT_COLLISION, EVENT_GOAL, EVENT_TIMEOUT, CrowdSim, JointState,
                  ScenarioConfig, discomfort_stats)
from .training import build_action_space, discounted_return

REPORT_FORMAT = "socnav-eval-report"
REPORT_VERSION = 1
TRAJECTORY_FORMAT = "socnav-trajectory"
POLAR_FORMAT = "socnav-value-polar"
ATTENTION_FORMAT = "socnav-attention"
ARTIFACT_VERSION = 1

SETTINGS = ("invisible", "visible")


@dataclass
class EvalReport:
    policy: str
    setting: str
    n_cases: int
    base_seed: int
    success_rate: float
    collision_rate: float
    timeout_rate: float
    mean_nav_time: float          # successful episodes only; nan if none
    discomfort_frequency: float   # mean over all episodes
    mean_return: float            # discounted, from episode start
    cases: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {"format": REPORT_FORMAT, "version": REPORT_VERSION}
        payload.update({k: getattr(self, k) for k in (
            "policy", "setting", "n_cases", "base_seed", "success_rate",
            "collision_rate", "timeout_rate", "mean_nav_time",
            "discomfort_frequency", "mean_return", "cases")})
        if math.isnan(self.mean_nav_time):
            payload["mean_nav_time"] = None
        return json.dumps(payload, indent=2)

    def table_row(self) -> str:
        time_s = "  n/a" if math.isnan(self.mean_nav_time) \
            else f"{self.mean_nav_time:5.2f}"
        return (f"{self.policy:<18s} {self.success_rate:7.2f} "
                f"{self.collision_rate:9.2f} {time_s} "
                f"{self.discomfort_frequency:6.3f} {self.mean_return:7.3f}")

    @staticmethod
    def table_header() -> str:
        return (f"{'Policy':<18s} {'Success':>7s} {'Collision':>9s} "
                f"{'Time':>5s} {'Disc.':>6s} {'Reward':>7s}")


def _run_case(policy, scenario: ScenarioConfig, seed: int, gamma: float) -> dict:
    env = CrowdSim(scenario)
    env.reset(seed)
    delta = env.dt * env.joint_state().robot.v_pref
    rewards = []
    flagged = False
    try:
        while not env.done:
            out = env.step(policy.act(env))
            rewards.append(out.reward)
    except Exception as exc:  # a broken policy forfeits the case
        flagged = True
        env.event = EVENT_TIMEOUT
        error = f"{type(exc).__name__}: {exc}"
    t_disc, disc_freq = discomfort_stats(env.records, env.dt)
    rec = {
        "case": None,  # filled by run_eval
        "seed": seed,
        "event": env.event,
        "nav_time": env.time,
        "steps": len(env.records),
        "return": discounted_return(rewards, gamma, delta),
        "discomfort_time": t_disc,
        "discomfort_frequency": disc_freq,
        "flagged": flagged,
    }
    if flagged:
        rec["error"] = error
    return rec


def run_eval(policy, scenario: ScenarioConfig, setting: str, n_cases: int,
             base_seed: int, gamma: float = 0.9, threads: int = 1,
             keep_cases: bool = True) -> EvalReport:
    """Evaluate a policy on test cases i = 0..n_cases-1 seeded base_seed+i."""
    if setting not in SETTINGS:
        raise UsageError(f"setting must be one of {SETTINGS}")
    if n_cases < 1:
        raise UsageError("n_cases must be >= 1")
    cfg = replace(scenario, robot_visible=(setting == "visible"))
    seeds = [base_seed + i for i in range(n_cases)]
    if threads > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(threads) as pool:
            cases = pool.starmap(_run_case,
                                 [(policy, cfg, s, gamma) for s in seeds])
    else:
        cases = [_run_case(policy, cfg, s, gamma) for s in seeds]
    for i, rec in enumerate(cases):
        rec["case"] = i
    events = [c["event"] for c in cases]
    succ = [c for c in cases if c["event"] == EVENT_GOAL]
    report = EvalReport(
        policy=getattr(policy, "name", type(policy).__name__),
        setting=setting,
        n_cases=n_cases,
        base_seed=base_seed,
        success_rate=events.count(EVENT_GOAL) / n_cases,
        collision_rate=events.count(EVENT_COLLISION) / n_cases,
        timeout_rate=events.count(EVENT_TIMEOUT) / n_cases,
        mean_nav_time=float(np.mean([c["nav_time"] for c in succ]))
        if succ else float("nan"),
        discomfort_frequency=float(np.mean([c["discomfort_frequency"]
                                            for c in cases])),
        mean_return=float(np.mean([c["return"] for c in cases])),
        cases=cases if keep_cases else [],
    )
    return report


def export_attention(policy_or_net, joint: JointState) -> list[float]:
    """Softmax attention weights for one frame, index-aligned with the humans."""
    if isinstance(policy_or_net, ValuePolicy):
        net = policy_or_net.net
    elif isinstance(policy_or_net, ValueNetwork):
        net = policy_or_net
    else:
        raise UnsupportedOperation(
            f"{type(policy_or_net).__name__} has no attention scores")
    return [float(a) for a in net.evaluate(joint).attention]


def value_polar_map(net: ValueNetwork, env, gamma: float = 0.9) -> list[dict]:
    """Lookahead value of every discrete action, in (speed, heading) order."""
    robot = env.joint_state().robot
    actions = build_action_space(robot.v_pref)
    values = net.values_of_actions(env, actions, gamma)
    entries = []
    for idx in range(len(actions)):
        speed_idx, heading_idx = divmod(idx, 16)
        entries.append({
            "speed_index": speed_idx,
            "heading_index": heading_idx,
            "speed": float(math.hypot(*actions[idx])),
            "heading": 2.0 * math.pi * heading_idx / 16.0,
            "action": [float(actions[idx, 0]), float(actions[idx, 1])],
            "value": float(values[idx]),
        })
    return entries


# -- plot-data artifacts -------------------------------------------------------


def trajectory_data(records: list[dict]) -> dict:
    """Structured trajectory samples from an episode log (one per agent per
    step, plus the post-step final positions)."""
    data = {"format": TRAJECTORY_FORMAT, "version": ARTIFACT_VERSION,
            "robot": [], "humans": [], "events": []}
    if not records:
        return data
    n = len(records[0]["humans"])
    data["humans"] = [[] for _ in range(n)]
    for rec in records:
        data["robot"].append({"t": rec["t"], "x": rec["robot"][0],
                              "y": rec["robot"][1]})
        for i, h in enumerate(rec["humans"]):
            data["humans"][i].append({"t": rec["t"], "x": h[0], "y": h[1]})
        if rec["event"] != "none":
            data["events"].append({"t": rec["t"], "event": rec["event"]})
    last = records[-1]
    dt = records[1]["t"] - records[0]["t"] if len(records) > 1 else 0.25
    t_end = last["t"] + dt
    data["robot"].append({"t": t_end,
                          "x": last["robot"][0] + last["action"][0] * dt,
                          "y": last["robot"][1] + last["action"][1] * dt})
    for i, h in enumerate(last["humans"]):
        data["humans"][i].append({"t": t_end, "x": h[0] + h[2] * dt,
                                  "y": h[1] + h[3] * dt})
    data["robot_radius"] = last["robot"][4]
    data["human_radii"] = [h[4] for h in last["humans"]]
    return data


def write_trajectory_data(records: list[dict], path) -> dict:
    data = trajectory_data(records)
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
    return data


def trajectory_svg(data: dict, label_every: float = 1.0) -> str:
    """Simple vector rendering: paths plus time-labeled circles."""
    size, half = 640.0, 5.5

    def sx(x):
        return (x + half) / (2 * half) * size

    def sy(y):
        return size - (y + half) / (2 * half) * size

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" '
             f'height="{size:.0f}" viewBox="0 0 {size:.0f} {size:.0f}">',
             f'<rect width="{size:.0f}" height="{size:.0f}" fill="white"/>']
    agents = [("robot", data.get("robot", []), data.get("robot_radius", 0.3),
               "#d62728")]
    for i, samples in enumerate(data.get("humans", [])):
        radius = data.get("human_radii", [0.3] * (i + 1))[i]
        agents.append((f"human{i + 1}", samples, radius, "#1f77b4"))
    for name, samples, radius, color in agents:
        if not samples:
            continue
        pts = " ".join(f"{sx(p['x']):.1f},{sy(p['y']):.1f}" for p in samples)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1"/>')
        for p in samples:
            t = p["t"]
            if label_every > 0 and abs(t / label_every - round(t / label_every)) < 1e-9:
                r_px = radius / (2 * half) * size
                parts.append(
                    f'<circle cx="{sx(p["x"]):.1f}" cy="{sy(p["y"]):.1f}" '
                    f'r="{r_px:.1f}" fill="none" stroke="{color}"/>')
                parts.append(
                    f'<text x="{sx(p["x"]):.1f}" y="{sy(p["y"]):.1f}" '
                    f'font-size="9" text-anchor="middle">{t:g}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def write_trajectory_svg(data: dict, path) -> None:
    with open(path, "w") as f:
        f.write(trajectory_svg(data))


def write_polar_data(entries: list[dict], path, meta: dict | None = None) -> None:
    payload = {"format": POLAR_FORMAT, "version": ARTIFACT_VERSION,
               "entries": entries}
    if meta:
        payload["meta"] = meta
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)


def write_attention_data(scores: list[float], path,
                         meta: dict | None = None) -> None:
    payload = {"format": ATTENTION_FORMAT, "version": ARTIFACT_VERSION,
               "scores": [{"human": i, "weight": s} for i, s in enumerate(scores)]}
    if meta:
        payload["meta"] = meta
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
