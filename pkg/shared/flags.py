# exit codes
EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_BLOWUP = 3
EXIT_INTERRUPTED = 130

# top-level commands
CMD_SIG = "sig"
CMD_EXPECTED = "expected"
CMD_SIMULATE = "simulate"
CMD_LAB = "lab"
CMD_REGRESS = "regress"
CMD_PREDICT = "predict"
CMD_CHARFUNC = "charfunc"

# simulated drivers
DRIVER_BM = "bm"
DRIVER_OU = "ou"
DRIVER_LANGEVIN = "langevin"

# lab experiments
LAB_MOMENTS = "moments"
LAB_ERGODIC = "ergodic"
LAB_STATIONARITY = "stationarity"
LAB_L2BOUND = "l2bound"
LAB_IDENTITY = "identity"
LAB_OU_REPR = "ourepr"
LAB_PREDICTION = "prediction"
LAB_ITO = "ito"

# where a signature starts accumulating
ORIGIN_START = "start"
ORIGIN_FLAT_PAST = "flat_past"
ORIGIN_FLAT_SPACE_PAST = "flat_space_past"

# regression feature models
MODEL_SIG_BM = "sig_bm"
MODEL_SIG_OU = "sig_ou"
MODEL_EFM_SIG = "efm_sig"

DRIVERS = [DRIVER_BM, DRIVER_OU, DRIVER_LANGEVIN]

EXPERIMENTS = [
    LAB_MOMENTS,
    LAB_ERGODIC,
    LAB_STATIONARITY,
    LAB_L2BOUND,
    LAB_IDENTITY,
    LAB_OU_REPR,
    LAB_PREDICTION,
    LAB_ITO,
]

ORIGINS = [ORIGIN_START, ORIGIN_FLAT_PAST, ORIGIN_FLAT_SPACE_PAST]

MODELS = [MODEL_SIG_BM, MODEL_SIG_OU, MODEL_EFM_SIG]
