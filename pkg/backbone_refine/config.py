"""Versioned numerical constants.

All literature geometry, default schedules, metric thresholds and
search parameters live here, so a change to any of them is a change to
:py:data:`CONSTANTS_VERSION` and shows up in every echoed run config.

Run-time knobs (training hyperparameters, schedule choice, I/O paths)
are not here: see :py:class:`backbone_refine.model.training.TrainConfig`,
:py:class:`backbone_refine.diffusion.schedule.ScheduleConfig` and
:py:class:`backbone_refine.cli.RunConfig`.
"""
import math

#: Bump whenever any value below changes
CONSTANTS_VERSION = 1

#: Backbone atom order used in every (N_res, 4, 3) coordinate array
BACKBONE_ATOMS = ("N", "CA", "C", "O")

#: One-letter amino acid codes, unknown residues map to X (index 20)
AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWYX"

#: Three-letter to one-letter residue names accepted by the PDB reader
THREE_TO_ONE = {
    "ALA": "A", "CYS": "C", "ASP": "D", "GLU": "E", "PHE": "F",
    "GLY": "G", "HIS": "H", "ILE": "I", "LYS": "K", "LEU": "L",
    "MET": "M", "ASN": "N", "PRO": "P", "GLN": "Q", "ARG": "R",
    "SER": "S", "THR": "T", "VAL": "V", "TRP": "W", "TYR": "Y",
}

#
# Ideal residue template, local frame with CA at the origin,
# C on +x and N in the xy-plane (Engh-Huber style values).
#

TEMPLATE_N = (-0.572, 1.337, 0.000)
TEMPLATE_CA = (0.0, 0.0, 0.0)
TEMPLATE_C = (1.517, 0.000, 0.000)

#: Carbonyl bond length in Å, O sits in the frame plane on the side opposite N
C_O_BOND = 1.231

#: CA-C-O bond angle in degrees
CA_C_O_ANGLE = 120.5

#
# Peptide geometry used by the synthetic backbone builder and the bond loss
#

#: Literature peptide C-N bond length, Å
PEPTIDE_BOND_LENGTH = 1.329

#: Bond loss tolerance r, Å
PEPTIDE_BOND_TOLERANCE = 0.1

#: CA(i)-C(i)-N(i+1) angle, degrees
CA_C_N_ANGLE = 116.2

#: C(i)-N(i+1)-CA(i+1) angle, degrees
C_N_CA_ANGLE = 121.7

#: (phi, psi) torsions in degrees for the synthetic secondary structures
HELIX_TORSIONS = (-57.0, -47.0)
STRAND_TORSIONS = (-120.0, 130.0)

#: Peptide bond torsion, trans
OMEGA = 180.0

#: Default torsion jitter for synthetic backbones, degrees
SYNTHETIC_TORSION_JITTER = 2.0

#
# SO(3)
#

#: Below this angle so3_log uses the first order series
SO3_SMALL_ANGLE = 1e-4

#: Within this distance from pi so3_log uses the eigenvector path
SO3_NEAR_PI = 1e-4

#
# Diffusion
#

DEFAULT_SCHEDULE_KIND = "linear"
DEFAULT_T_MAX = 100
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.05

#: Offset s of the squared-cosine schedule
COSINE_OFFSET = 0.008

#: Clip range for betas derived from the cosine profile
COSINE_BETA_CLIP = (1e-5, 0.999)

#: Optional global coordinate scale applied before translation noise, 1.0 = off
TRANSLATION_SCALE = 1.0

#: IGSO(3) series exponent convention: exp(-l(l+1) * eps)
IGSO3_CONVENTION = "exp(-l(l+1)*eps)"

#: Truncate the series when the last term's relative contribution drops below this
IGSO3_SERIES_TOLERANCE = 1e-8

#: Hard cap on the series truncation level
IGSO3_MAX_L = 5000

#: Number of angle bins in the inverse-CDF sampling table
IGSO3_TABLE_BINS = 4096

#: Below this omega/2 the series term uses its analytic omega -> 0 limit
IGSO3_SMALL_HALF_ANGLE = 1e-7

#: Below this variance the sampler uses the tangent-space Gaussian limit
IGSO3_GAUSSIAN_LIMIT_EPS = 1e-5

#
# Losses
#

#: Optional per-pair FAPE clamp in Å when clamping is switched on
FAPE_CLAMP = 10.0

DEFAULT_W_MSE = 1.0
DEFAULT_W_BOND = 0.1
DEFAULT_W_SCORE = 0.0

#
# Metrics
#

GDT_TS_THRESHOLDS = (1.0, 2.0, 4.0, 8.0)
GDT_HA_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)

#: Contiguous seed window lengths for the GDT superposition search, plus the full chain
GDT_SEED_WINDOWS = (4, 8, 16)

#: Iterations of the superpose-on-inliers loop per seed
GDT_MAX_ITERATIONS = 10

LDDT_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
LDDT_INCLUSION_RADIUS = 15.0

#: Singular values below this mark a degenerate Kabsch subset
KABSCH_DEGENERATE = 1e-9

#
# Refinement
#

DEFAULT_REFINE_STEPS = 4

#: Re-project rotations onto SO(3) every this many composed updates
REORTHONORMALIZE_EVERY = 64

#: Central finite difference step for the gradient baseline refiner
GRADIENT_REFINER_H = 1e-4

#
# Toy refiner
#

DEFAULT_K_NEIGHBOURS = 16
SEQUENCE_OFFSET_CLIP = 32
SEQUENCE_OFFSET_DIMS = 8
RBF_CENTERS = 16
RBF_MAX_DISTANCE = 20.0
TIMESTEP_DIMS = 8
HIDDEN_WIDTH = 64

#: Output head bounds: |rotvec| <= pi/2 and |t_local| <= 10 Å
MAX_ROTVEC_NORM = math.pi / 2
MAX_LOCAL_TRANSLATION = 10.0

#: Desk scale limits for training
MAX_TRAIN_RESIDUES = 64
MAX_TRAIN_STRUCTURES = 200
