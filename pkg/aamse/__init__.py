""" aamse - Audio-Articulatory Movement Speech Enhancement """

import sys

__version__ = "0.3.0"

# the object oriented API
from .models import SEModel
from .models import build_model
from .models import default_spec
from .models import train
from .models import enhance

# the core functions
from .core import Waveform
from .core import stft
from .core import istft
from .core import read_wav
from .core import write_wav

from .corpus import mix_at_snr
from .corpus import synth_corpus
from .corpus import build_manifest
from .corpus import select_sensors

from .metrics import stoi
from .metrics import si_sdr
from .evaluation import evaluate

# ----------------------------------
# --- entry point for the batch CLI ---
# ----------------------------------


def main(argv=None):

    # the command line pulls in argparse/configparser,
    # not needed for scripting
    from aamse.cli import run

    sys.exit(run(argv))
