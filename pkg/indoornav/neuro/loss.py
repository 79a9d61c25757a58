from dataclasses import dataclass

import numpy as np

from ..exceptions import NeuroError
from .layers import log_softmax, softmax


@dataclass
class A3CLoss:
    total: float
    policy: float
    value: float
    entropy: float
    returns: np.ndarray
    advantages: np.ndarray
    d_logits: np.ndarray
    """dL/dlogits, shape (T, A)."""
    d_values: np.ndarray
    """dL/dvalues, shape (T,)."""


def discounted_returns(rewards: np.ndarray, gamma: float, bootstrap: float) -> np.ndarray:
    """R_t = r_t + gamma * R_{t+1}, with R_T = bootstrap."""
    out = np.empty(len(rewards))
    running = float(bootstrap)
    for t in reversed(range(len(rewards))):
        running = float(rewards[t]) + gamma * running
        out[t] = running
    return out


def a3c_loss(
    logits: np.ndarray,
    values: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    gamma: float = 0.99,
    beta_entropy: float = 0.01,
    bootstrap_value: float = 0.0,
) -> A3CLoss:
    """n-step actor-critic loss with analytic gradients.

    total = -sum log pi(a_t) A_t + 0.5 * 0.5 * sum (R_t - v_t)^2 - beta * sum H(pi_t)

    The advantage A_t = R_t - v_t is treated as a constant in the policy
    term, so the value estimate only receives gradient from the value term.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    rewards = np.asarray(rewards, dtype=np.float64).reshape(-1)
    T = len(logits)
    if T < 1:
        raise NeuroError("Empty trajectory", "length-mismatch")
    if not (len(values) == len(actions) == len(rewards) == T):
        raise NeuroError(
            f"Trajectory lengths differ: logits {T}, values {len(values)}, "
            f"actions {len(actions)}, rewards {len(rewards)}",
            "length-mismatch",
        )
    returns = discounted_returns(rewards, gamma, bootstrap_value)
    advantages = returns - values
    logp = log_softmax(logits)
    p = softmax(logits)
    chosen = logp[np.arange(T), actions]
    entropy_t = -(p * logp).sum(axis=1)

    policy = float(-(chosen * advantages).sum())
    value = float(0.5 * (advantages**2).sum())
    entropy = float(entropy_t.sum())
    total = policy + 0.5 * value - beta_entropy * entropy

    onehot = np.zeros_like(p)
    onehot[np.arange(T), actions] = 1.0
    d_logits = -advantages[:, None] * (onehot - p) + beta_entropy * p * (
        logp + entropy_t[:, None]
    )
    d_values = 0.5 * (values - returns)
    return A3CLoss(total, policy, value, entropy, returns, advantages, d_logits, d_values)
