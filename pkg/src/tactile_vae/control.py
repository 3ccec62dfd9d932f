"""Latent-space model-predictive control of a simulated inverted pole.

The pole tip rests against a fingertip sensor. The controller never sees the
pole angle: it observes the VAE encoding of the tactile frame plus its own
finger position, predicts the next observation for each discrete action with
a small learned network, and picks the action whose prediction scores best.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, asdict
from typing import Dict, List, Optional, Sequence

import numpy as np

from .calibration import latent_correlation_profile
from .nn import (
    MlpParams,
    NumericError,
    OptimizerState,
    backprop_grads,
    forward_trace,
    init_mlp,
    mlp_forward,
    optimizer_step,
)
from .sim import (
    ROLL_RANGE,
    SHORE_RANGE,
    Dataset,
    SensorModel,
    Stimulus,
    TactileStream,
    taxel_frame_noiseless,
)
from .vae import VaeModel, active_units, encode

log = logging.getLogger(__name__)

NOOP, RETRACT, ADVANCE = 0, 1, 2
ACTION_SIGNS = (0.0, -1.0, 1.0)


@dataclass
class PlantConfig:
    gravity: float = 9.81
    length: float = 0.3
    mass: float = 0.05
    stiffness: float = 40.0  # tip-finger coupling spring [N/m]
    damping: float = 0.5  # [1/s]
    action_step: float = 0.002  # finger move per action [m]
    dt: float = 0.03
    preload: float = 1.5  # normal force of the finger on the tip [N]
    max_force: float = 5.0
    offset_limit: float = 0.05  # finger travel [m]


@dataclass
class PendulumState:
    angle: float = 0.0
    angular_velocity: float = 0.0
    finger_offset: float = 0.0

    @property
    def terminal(self) -> bool:
        return abs(self.angle) > math.pi / 2 or not (
            math.isfinite(self.angle) and math.isfinite(self.angular_velocity)
        )


def angular_acceleration(state: PendulumState, plant: PlantConfig) -> float:
    g, l, m = plant.gravity, plant.length, plant.mass
    s = math.sin(state.angle)
    coupling = plant.stiffness / (m * l * l) * (l * s - state.finger_offset)
    return g / l * s - coupling - plant.damping * state.angular_velocity


def pendulum_step(state: PendulumState, action: int, plant: Optional[PlantConfig] = None) -> PendulumState:
    """Move the finger by one action increment, then advance one semi-implicit Euler step."""
    plant = plant or PlantConfig()
    offset = state.finger_offset + ACTION_SIGNS[action] * plant.action_step
    offset = min(max(offset, -plant.offset_limit), plant.offset_limit)
    moved = PendulumState(state.angle, state.angular_velocity, offset)
    omega = state.angular_velocity + plant.dt * angular_acceleration(moved, plant)
    return PendulumState(state.angle + plant.dt * omega, omega, offset)


def equilibrium_offset(angle: float, plant: PlantConfig) -> float:
    """Finger offset that holds the pole at rest at ``angle``."""
    g, l, m = plant.gravity, plant.length, plant.mass
    return math.sin(angle) * (l - g * m * l / plant.stiffness) if plant.stiffness > 0 else 0.0


def contact_force(state: PendulumState, plant: PlantConfig) -> float:
    f = plant.preload + plant.stiffness * (plant.length * math.sin(state.angle) - state.finger_offset)
    return min(max(f, 0.0), plant.max_force)


def tip_stimulus(state: PendulumState, plant: Optional[PlantConfig] = None) -> Stimulus:
    """What the fingertip feels: the contact force and the pole tilt as surface roll."""
    plant = plant or PlantConfig()
    roll = min(max(math.degrees(state.angle), ROLL_RANGE[0]), ROLL_RANGE[1])
    return Stimulus(force=contact_force(state, plant), pitch=0.0, roll=roll,
                    shore=SHORE_RANGE[1], curvature="r10")


def reward(z_sel, target=0.0, tau: float = 1.0) -> float:
    if tau <= 0:
        raise ValueError("tau must be positive")
    d = np.asarray(z_sel, dtype=np.float64) - target
    return float(np.exp(-np.dot(d.ravel(), d.ravel()) / tau))


# --- one-step predictor -----------------------------------------------------

@dataclass
class Transitions:
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        self.next_states = np.atleast_2d(np.asarray(self.next_states, dtype=np.float64))
        self.actions = np.asarray(self.actions, dtype=np.int64).ravel()
        if self.states.shape != self.next_states.shape or len(self.actions) != len(self.states):
            raise ValueError("transition arrays disagree in shape")
        if np.any((self.actions < 0) | (self.actions >= len(ACTION_SIGNS))):
            raise ValueError("action outside the action set")

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def concat(cls, parts: Sequence["Transitions"]) -> "Transitions":
        return cls(np.vstack([p.states for p in parts]), np.concatenate([p.actions for p in parts]),
                   np.vstack([p.next_states for p in parts]))


@dataclass
class Predictor:
    """``next_state = state + net(standardized [state, one-hot action]) * out_scale``."""

    net: MlpParams
    in_mean: np.ndarray
    in_scale: np.ndarray
    out_scale: float
    n_actions: int = len(ACTION_SIGNS)

    def inputs(self, states, actions) -> np.ndarray:
        states = np.atleast_2d(states)
        onehot = np.eye(self.n_actions)[np.asarray(actions, dtype=np.int64).ravel()]
        return np.hstack([(states - self.in_mean) / self.in_scale, onehot])

    def predict(self, states, actions) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        return states + mlp_forward(self.net, self.inputs(states, actions)) * self.out_scale


def _training_arrays(pred: Predictor, data: Transitions):
    X = pred.inputs(data.states, data.actions)
    return X, (data.next_states - data.states) / pred.out_scale


def _loss_from_arrays(net: MlpParams, X: np.ndarray, target: np.ndarray, with_grads: bool):
    trace = forward_trace(net, X)
    err = trace[-1][2] - target
    loss = float(np.mean(err * err))
    if not with_grads:
        return loss
    return loss, backprop_grads(net, X, 2.0 * err / err.size, trace=trace)


def predictor_loss(pred: Predictor, data: Transitions, with_grads: bool = False):
    """Mean squared error in scaled residual units, averaged over rows and outputs."""
    X, target = _training_arrays(pred, data)
    return _loss_from_arrays(pred.net, X, target, with_grads)


def train_predictor(data: Transitions, seed: int = 0, hidden: int = 20, iterations: int = 400,
                    step_rate: float = 0.01, init: Optional[Predictor] = None) -> Predictor:
    """Fit the one-step model with full-batch rmsprop on the MSE.

    ``init`` warm-starts from an earlier predictor (its weights are copied, the
    normalization is refreshed from ``data``).
    """
    if len(data) == 0:
        raise ValueError("need at least one transition")
    rng = np.random.default_rng(seed)
    width = data.states.shape[1]
    in_mean = data.states.mean(axis=0)
    in_scale = data.states.std(axis=0)
    in_scale = np.maximum(in_scale, 1e-3 * max(float(in_scale.max()), 1e-12))
    resid = data.next_states - data.states
    out_scale = float(np.sqrt(np.mean(resid**2))) or 1.0
    if init is not None:
        net = init.net.copy()
    else:
        net = init_mlp([width + len(ACTION_SIGNS), hidden, width], "rectifier", rng)
    pred = Predictor(net, in_mean, in_scale, out_scale)
    X, target = _training_arrays(pred, data)
    params = net.named_arrays()
    state = OptimizerState("rmsprop", step_rate)
    for it in range(iterations):
        loss, grads = _loss_from_arrays(net, X, target, with_grads=True)
        if not np.isfinite(loss):
            raise NumericError(f"predictor training diverged at iteration {it} (loss {loss})")
        optimizer_step(params, grads.named_arrays(), state)
    return pred


def select_action(pred: Predictor, state, score, n_actions: int = len(ACTION_SIGNS)) -> int:
    """Greedy one-step choice: the action whose predicted next state scores highest.

    ``score`` maps a predicted state vector to a reward. Ties go to the lowest
    action index, which is the no-op.
    """
    if n_actions < 1:
        raise ValueError("empty action set")
    state = np.asarray(state, dtype=np.float64)
    preds = pred.predict(np.repeat(state[None, :], n_actions, axis=0), np.arange(n_actions))
    values = [score(p) for p in preds]
    return int(np.argmax(values))


# --- experiment -------------------------------------------------------------

@dataclass
class ControlConfig:
    n_experiments: int = 10
    n_rollouts: int = 30
    steps: int = 100
    control_interval: int = 3
    score_window: int = 10
    start_angle_deg: float = 10.0
    epsilon: float = 0.1
    tau: float = 1.0
    seed: int = 0
    predictor_hidden: int = 20
    predictor_iterations: int = 1000
    predictor_step_rate: float = 0.01
    warm_start: bool = True
    warm_iterations: int = 200
    active_state: bool = True  # predictor sees active units only (see make_reward_setup)
    plant: PlantConfig = field(default_factory=PlantConfig)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class RewardSetup:
    """Which latent dims the reward looks at, and where it peaks.

    ``state_dims`` are the latent dims the predictor models (``None``: all of
    them); they must include ``dims``.
    """

    dims: List[int]
    target: np.ndarray
    tau: float = 1.0
    state_dims: Optional[List[int]] = None

    def __post_init__(self):
        if self.state_dims is not None:
            missing = set(self.dims) - set(self.state_dims)
            if missing:
                raise ValueError(f"reward dims {sorted(missing)} are not among the state dims")

    def __call__(self, latent) -> float:
        return reward(np.asarray(latent)[self.dims], self.target, self.tau)

    def state(self, latent) -> np.ndarray:
        """The part of a full latent vector the predictor sees."""
        latent = np.asarray(latent)
        return latent if self.state_dims is None else latent[self.state_dims]

    def score_state(self, state) -> float:
        """Reward of a (predicted) state vector as returned by :meth:`state`."""
        if self.state_dims is None:
            return self(state)
        pos = [self.state_dims.index(d) for d in self.dims]
        return reward(np.asarray(state)[pos], self.target, self.tau)


def make_reward_setup(vae: VaeModel, pretrain: Dataset, sensor: SensorModel, plant: PlantConfig,
                      tau: float = 1.0, active_only: bool = True) -> RewardSetup:
    """Pick the latent dims most correlated with force and with roll on the
    pre-training data; the target is the encoding of the upright pole under
    the finger's preload.

    With ``active_only`` the predictor state is restricted to the model's
    active units (plus the reward dims). Collapsed units carry no information
    about the frame, but per-dim standardization would blow their residual
    jitter up to the same scale as the informative dims.
    """
    Z = encode(vae, pretrain.frames).mean
    prof = latent_correlation_profile(Z, {"force": pretrain.labels("force"), "roll": pretrain.labels("roll")})
    force_dim = int(np.argmax(np.abs(prof["force"])))
    roll_r = np.abs(prof["roll"]).copy()
    roll_r[force_dim] = -1.0
    dims = [force_dim, int(np.argmax(roll_r))]
    upright = taxel_frame_noiseless(sensor, tip_stimulus(PendulumState(), plant))
    target = encode(vae, upright.values).mean[dims]
    state_dims = sorted(set(active_units(vae, pretrain.frames)) | set(dims)) if active_only else None
    return RewardSetup(dims, target, tau, state_dims)


@dataclass
class RewardCurve:
    rewards: np.ndarray  # (experiments, rollouts)

    @property
    def mean_curve(self) -> np.ndarray:
        if self.rewards.size == 0:
            return np.zeros(self.rewards.shape[1] if self.rewards.ndim == 2 else 0)
        return self.rewards.mean(axis=0)


def run_rollout(vae: VaeModel, sensor: SensorModel, setup: RewardSetup, cfg: ControlConfig,
                rng: np.random.Generator, pred: Optional[Predictor], random_policy: bool):
    """One closed-loop episode. Returns ``(score, transitions, step rewards)``.

    The score is the mean reward over the last ``score_window`` steps; steps
    lost to an early termination count as zero. A decision moves the finger
    once, then the plant runs ``control_interval`` steps before the next
    observation; the sensor is read on every plant step, so its lag filter
    advances at the plant rate.
    """
    plant = cfg.plant
    angle = math.radians(rng.uniform(-cfg.start_angle_deg, cfg.start_angle_deg))
    state = PendulumState(angle, 0.0, equilibrium_offset(angle, plant))
    stream = TactileStream(sensor, rng)

    def observe(s: PendulumState) -> np.ndarray:
        frame = stream.read(tip_stimulus(s, plant))
        return np.append(setup.state(encode(vae, frame).mean), s.finger_offset)

    def advance(s: PendulumState, a: int) -> PendulumState:
        s = pendulum_step(s, a, plant)
        for _ in range(cfg.control_interval - 1):
            if s.terminal:
                break
            stream.read(tip_stimulus(s, plant))
            s = pendulum_step(s, NOOP, plant)
        return s

    obs = observe(state)
    states, actions, nexts, rewards = [], [], [], []
    for _ in range(cfg.steps):
        rewards.append(setup.score_state(obs[:-1]))
        explore = random_policy or pred is None or rng.random() < cfg.epsilon
        if explore:
            a = int(rng.integers(len(ACTION_SIGNS)))
        else:
            a = select_action(pred, obs, lambda p: setup.score_state(p[:-1]))
        state = advance(state, a)
        if state.terminal:
            break
        nxt = observe(state)
        states.append(obs)
        actions.append(a)
        nexts.append(nxt)
        obs = nxt
    padded = np.zeros(cfg.steps)
    padded[: len(rewards)] = rewards
    score = float(padded[-cfg.score_window:].mean())
    width = len(obs)
    trans = Transitions(np.reshape(states, (-1, width)), np.asarray(actions, dtype=np.int64),
                        np.reshape(nexts, (-1, width)))
    return score, trans, padded


def run_experiment(vae: VaeModel, sensor: SensorModel, setup: RewardSetup, cfg: ControlConfig,
                   index: int) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, index])
    scores = np.zeros(cfg.n_rollouts)
    data: List[Transitions] = []
    pred: Optional[Predictor] = None
    for k in range(cfg.n_rollouts):
        scores[k], trans, _ = run_rollout(vae, sensor, setup, cfg, rng, pred, random_policy=(k == 0))
        if len(trans):
            data.append(trans)
        if data:
            warm = cfg.warm_start and pred is not None
            pred = train_predictor(Transitions.concat(data), seed=int(rng.integers(2**31)),
                                   hidden=cfg.predictor_hidden,
                                   iterations=cfg.warm_iterations if warm else cfg.predictor_iterations,
                                   step_rate=cfg.predictor_step_rate, init=pred if warm else None)
        log.debug("experiment %d rollout %d score %.3f", index, k + 1, scores[k])
    return scores


def run_control_experiment(vae: VaeModel, sensor: SensorModel, setup: RewardSetup,
                           cfg: Optional[ControlConfig] = None) -> RewardCurve:
    """All experiments; each derives its random stream from ``(seed, experiment index)``."""
    cfg = cfg or ControlConfig()
    rows = [run_experiment(vae, sensor, setup, cfg, e) for e in range(cfg.n_experiments)]
    return RewardCurve(np.array(rows).reshape(cfg.n_experiments, cfg.n_rollouts))


def format_config_text(cfg: ControlConfig) -> str:
    """Inverse of :func:`parse_config_text`: every constant as ``key = value``."""
    lines = ["# pole-balancing experiment; plant constants carry a plant. prefix"]
    for f in fields(ControlConfig):
        if f.name != "plant":
            v = getattr(cfg, f.name)
            lines.append(f"{f.name} = " + (str(v).lower() if isinstance(v, bool) else repr(v)))
    lines.extend(f"plant.{f.name} = {getattr(cfg.plant, f.name)!r}" for f in fields(PlantConfig))
    return "\n".join(lines) + "\n"


def parse_config_text(text: str, base: Optional[ControlConfig] = None) -> ControlConfig:
    """``key = value`` lines (``#`` comments); plant constants use a ``plant.`` prefix."""
    cfg = base or ControlConfig()
    types = {f.name: f.type for f in fields(ControlConfig)}
    plant_types = {f.name: f.type for f in fields(PlantConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("plant."):
            name = key[len("plant."):]
            if name not in plant_types:
                raise ValueError(f"line {lineno}: unknown plant constant {name!r}")
            setattr(cfg.plant, name, float(value))
        elif key in types and key != "plant":
            kind = types[key] if isinstance(types[key], str) else types[key].__name__
            if kind == "bool":
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(f"line {lineno}: {key} expects true/false, got {value!r}")
                setattr(cfg, key, value.lower() in ("true", "1"))
            else:
                try:
                    setattr(cfg, key, int(value) if kind == "int" else float(value))
                except ValueError:
                    raise ValueError(f"line {lineno}: bad {kind} value {value!r} for {key}") from None
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    return cfg
