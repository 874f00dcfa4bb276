from typing import Dict, NamedTuple, Tuple


class StageSettings(NamedTuple):
    """Training settings for one stage of the two-stage estimator."""
    epochs: int
    batch_size: int
    hidden: Tuple[int, ...]
    activation: str
    batchnorm: bool
    learning_rate: float
    optimizer: str


class OutcomeSettings(NamedTuple):
    stage: StageSettings
    rep_hidden: Tuple[int, ...]
    rep_width: int
    alpha: float


class LatentSettings(NamedTuple):
    m_l: int
    m_e: int
    epochs: int
    batch_size: int
    hidden: Tuple[int, ...]
    activation: str
    learning_rate: float


SYN = "syn"
DEMAND = "demand"
CSV = "csv"

# Treatment regression (stage 1)
TREATMENT_SETTINGS: Dict[str, StageSettings] = {
    SYN:
    StageSettings(epochs=3,
                  batch_size=500,
                  hidden=(128, 64),
                  activation="relu",
                  batchnorm=True,
                  learning_rate=0.05,
                  optimizer="sgd"),
    DEMAND:
    StageSettings(epochs=20,
                  batch_size=500,
                  hidden=(128, 64),
                  activation="relu",
                  batchnorm=True,
                  learning_rate=0.005,
                  optimizer="sgd"),
}

# Outcome regression (stage 2). Epochs count minibatch iterations.
OUTCOME_SETTINGS: Dict[str, OutcomeSettings] = {
    SYN:
    OutcomeSettings(stage=StageSettings(epochs=3000,
                                        batch_size=256,
                                        hidden=(256, ) * 5,
                                        activation="elu",
                                        batchnorm=False,
                                        learning_rate=5e-4,
                                        optimizer="adam"),
                    rep_hidden=(256, 256),
                    rep_width=256,
                    alpha=0.01),
    DEMAND:
    OutcomeSettings(stage=StageSettings(epochs=6000,
                                        batch_size=200,
                                        hidden=(256, ) * 5,
                                        activation="elu",
                                        batchnorm=False,
                                        learning_rate=0.005,
                                        optimizer="adam"),
                    rep_hidden=(256, 256),
                    rep_width=256,
                    alpha=0.1),
}

LATENT_SETTINGS: Dict[str, LatentSettings] = {
    SYN:
    LatentSettings(m_l=5,
                   m_e=1,
                   epochs=10,
                   batch_size=200,
                   hidden=(64, 64, 64),
                   activation="elu",
                   learning_rate=1e-4),
    DEMAND:
    LatentSettings(m_l=5,
                   m_e=1,
                   epochs=300,
                   batch_size=200,
                   hidden=(64, 64, 64),
                   activation="elu",
                   learning_rate=1e-4),
}

# CSV data falls back to the synthetic settings
TREATMENT_SETTINGS[CSV] = TREATMENT_SETTINGS[SYN]
OUTCOME_SETTINGS[CSV] = OUTCOME_SETTINGS[SYN]
LATENT_SETTINGS[CSV] = LATENT_SETTINGS[SYN]

LATENT_MIN_SAMPLES = 5000

# Numerics
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8
BATCHNORM_MOMENTUM = 0.9
BATCHNORM_EPSILON = 1e-5
OUTCOME_L2_DECAY = 1e-4
PROBABILITY_CLIP = 1e-7
GRAD_CHECK_STEP = 1e-5
GRAD_CHECK_FLOOR = 1e-4

# Balancing
SINKHORN_EPSILON = 0.1
SINKHORN_ITERATIONS = 50
SINKHORN_MIN_EPSILON = 1e-8
DEGENERATE_ARM_MASS = 1e-12
CLUB_UPDATE_RATIO = 1
CLUB_HIDDEN = (64, )
DISCREPANCY_SAMPLE = 1000

# Data
SPLIT_FRACTIONS = (0.63, 0.27, 0.10)
SYN_OFF_DIAGONAL = 0.05
DEMAND_NOISE_CORRELATION = 0.5
DEMAND_GRID_POINTS = 10
DEMAND_GRID_PERCENTILES = (5.0, 95.0)
CSV_FLOAT_FORMAT = "%.17g"
ORACLE_PREFIX = "oracle_"
ORACLE_MU0 = "oracle_mu0"
ORACLE_MU1 = "oracle_mu1"
ORACLE_PROPENSITY = "oracle_p"
ORACLE_X1 = "oracle_x1"
ORACLE_X2 = "oracle_x2"

SYN_PRESETS: Dict[str, Tuple[int, int, int]] = {
    "syn-1-4-4": (1, 4, 4),
    "syn-2-4-4": (2, 4, 4),
    "syn-2-10-4": (2, 10, 4),
    "syn-2-4-10": (2, 4, 10),
}
DEMAND_PRESETS: Dict[str, Tuple[float, float]] = {
    "demand-0-1": (0.0, 1.0),
    "demand-0-5": (0.0, 5.0),
    "demand-5-1": (5.0, 1.0),
}
DEFAULT_SYN_PRESET = "syn-2-4-4"
DEFAULT_DEMAND_PRESET = "demand-0-1"
DEFAULT_SAMPLES = 10000

# Toy identity check
IDENTITY_TOLERANCE = 1e-12
FIXTURES = ("additive.json", "multiplicative.json")
BROKEN_FIXTURE = "broken.json"

# CLI exit codes
EXIT_CONFIG = 2
EXIT_MAJORITY_FAILED = 3
EXIT_IO = 4
