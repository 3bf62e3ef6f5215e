ZOCERTIFY_SEED_DEFAULT_VALUE = 0
ZOCERTIFY_THREADS_DEFAULT_VALUE = 1
ZOCERTIFY_OUTPUT_DIR_DEFAULT_VALUE = "runs"

# Smoothing step and noise level used for the full-scale experiments.
ZO_XI_DEFAULT_VALUE = 0.005
ZO_Q_DEFAULT_VALUE = 20
NOISE_SIGMA_DEFAULT_VALUE = 0.25
LEARNING_RATE_DEFAULT_VALUE = 1e-4
LR_DECAY_FACTOR = 0.1

CERTIFY_N0_DEFAULT_VALUE = 100
CERTIFY_N_DEFAULT_VALUE = 1000
CERTIFY_ALPHA_DEFAULT_VALUE = 0.001
CERTIFY_RADII_DEFAULT_VALUE = (0.0, 0.25, 0.5, 0.75)
CERTIFY_BATCH_SIZE_DEFAULT_VALUE = 200
ABSTAIN = -1

PIXEL_MIN = 0.0
PIXEL_MAX = 1.0
LOG_PROB_FLOOR = 1e-12
MMD_FALLBACK_BANDWIDTH = 1.0
MEDIAN_BANDWIDTH = "median"

BN_MOMENTUM_DEFAULT_VALUE = 0.1
BN_EPSILON_DEFAULT_VALUE = 1e-5

CHECKPOINT_MAGIC = b"ZOCKPT\x00\x01"
CHECKPOINT_FORMAT_VERSION = 1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CONFIG_FILE_NAME = "config.ini"
MANIFEST_FILE_NAME = "manifest.json"
RUN_LOG_FILE_NAME = "run_log.csv"
CERTIFICATION_FILE_NAME = "certification.csv"
CURVE_FILE_NAME = "curve.csv"
ACCURACY_FILE_NAME = "accuracy.csv"
TABLE_FILE_NAME = "table.csv"
PLOT_DATA_FILE_NAME = "plot_data.csv"
CLASSIFIER_CHECKPOINT = "classifier.ckpt"
DENOISER_CHECKPOINT = "denoiser.ckpt"
ENCODER_CHECKPOINT = "encoder.ckpt"
DECODER_CHECKPOINT = "decoder.ckpt"
TARGET_RUN_DIR = "target"
DEFEND_RUN_DIR_FORMAT = "defend-{label}"
NO_DENOISER_LABEL = "identity"
CERTIFY_RUN_DIR_FORMAT = "certify-{label}"
REPORT_RUN_DIR = "report"

RUN_LOG_FIELDS = (
    "step",
    "epoch",
    "ce",
    "cs",
    "mmd",
    "total",
    "objective",
    "queries_total",
    "wall_ms",
)
CERTIFICATION_FIELDS = (
    "example_id",
    "true_label",
    "predicted",
    "radius",
    "p_lower",
    "queries",
)
CURVE_FIELDS = ("radius", "certified_accuracy", "n_examples")

EXIT_OK = 0
EXIT_VALIDATION_ERROR = 2
EXIT_NUMERICAL_ERROR = 3
