"""Ready-made desk scenarios, as plain scenario documents.

These are the configurations the shipped ``scenarios/*.json`` files were
generated from; tests and demos build variants by overriding fields.
"""

from __future__ import annotations


def chain_scenario(
    n_hosts: int = 5,
    objective_bonus: float = 100.0,
    action_cost: float = 1.0,
    user_worth: float = 0.0,
    root_worth: float = 0.0,
    host_worth: float = 0.0,
    scan_prob: float = 1.0,
    exploit_prob: float = 0.9,
    escalate_prob: float = 0.95,
    max_steps: int = 80,
    gamma: float = 1.0,
    noise: float = 0.0,
    step_latency_ms: float = 0.0,
) -> dict:
    """Linear kill chain: foothold on h0, objective on the far end.

    The default reward is sparse (worth only at the objective), the shape
    that makes too-short game horizons unwinnable.  The action list is the
    minimal useful set: scan/exploit per non-entry host, escalate and the
    objective on the last host.
    """
    if n_hosts < 2:
        raise ValueError("chain needs at least 2 hosts")
    names = [f"h{i}" for i in range(n_hosts)]
    hosts = []
    for i, name in enumerate(names):
        neighbors = [names[j] for j in (i - 1, i + 1) if 0 <= j < n_hosts]
        hosts.append({"id": name, "worth": host_worth, "neighbors": neighbors})
    last = names[-1]
    actions = []
    for name in names[1:]:
        actions.append(
            {"kind": "scan", "target": name, "success_prob": scan_prob, "cost": action_cost}
        )
    for name in names[1:]:
        actions.append(
            {
                "kind": "exploit_user",
                "target": name,
                "success_prob": exploit_prob,
                "cost": action_cost,
            }
        )
    actions.append(
        {
            "kind": "escalate_root",
            "target": last,
            "success_prob": escalate_prob,
            "cost": action_cost,
        }
    )
    actions.append(
        {"kind": "objective", "target": last, "success_prob": 1.0, "cost": action_cost}
    )
    return {
        "name": f"desk{n_hosts}-chain",
        "hosts": hosts,
        "entry_host": names[0],
        "objective_host": last,
        "actions": actions,
        "reward": {
            "user_worth": user_worth,
            "root_worth": root_worth,
            "objective_bonus": objective_bonus,
            "action_cost": action_cost,
        },
        "game": {"max_steps": max_steps, "gamma": gamma},
        "noise": noise,
        "step_latency_ms": step_latency_ms,
    }


def mesh_scenario(max_steps: int = 100, gamma: float = 1.0, noise: float = 0.0) -> dict:
    """Six-host diamond mesh with worth-bearing hosts and the full auto action set.

    Structurally different from the chain (branching paths, richer rewards,
    escalation available everywhere) so it exercises the scenario-agnostic
    code paths.
    """
    edges = {
        "dmz": ["web", "mail"],
        "web": ["dmz", "app"],
        "mail": ["dmz", "app", "files"],
        "app": ["web", "mail", "vault"],
        "files": ["mail", "vault"],
        "vault": ["app", "files"],
    }
    worth = {"dmz": 0.0, "web": 2.0, "mail": 2.0, "app": 4.0, "files": 3.0, "vault": 5.0}
    hosts = [
        {"id": name, "worth": worth[name], "neighbors": nbrs}
        for name, nbrs in edges.items()
    ]
    return {
        "name": "desk6-mesh",
        "hosts": hosts,
        "entry_host": "dmz",
        "objective_host": "vault",
        "auto_actions": True,
        "action_defaults": {
            "scan": {"success_prob": 1.0},
            "exploit_user": {"success_prob": 0.8},
            "escalate_root": {"success_prob": 0.9},
            "objective": {"success_prob": 1.0},
        },
        "reward": {
            "user_worth": 10.0,
            "root_worth": 5.0,
            "objective_bonus": 100.0,
            "action_cost": 1.0,
        },
        "game": {"max_steps": max_steps, "gamma": gamma},
        "noise": noise,
        "step_latency_ms": 0.0,
    }


def deterministic_chain(n_hosts: int = 3) -> dict:
    """All success probabilities 1.0 and rich worths: every rollout is identical."""
    doc = chain_scenario(
        n_hosts=n_hosts,
        scan_prob=1.0,
        exploit_prob=1.0,
        escalate_prob=1.0,
        user_worth=10.0,
        root_worth=5.0,
        host_worth=2.0,
        max_steps=40,
    )
    doc["name"] = f"desk{n_hosts}-deterministic"
    return doc
