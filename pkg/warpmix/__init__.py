from .constants import *
from .curves import *
from .config import *
from .model import *
from .offset import *
from .inference import *
from .em import *
from .synth import *
from .evaluate import *
from .reader import *
from .writer import *
from .manifest import *
