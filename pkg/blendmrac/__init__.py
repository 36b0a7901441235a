from .client import BlendMRAC
from .exceptions import BlendMRACException
from .models import CornerSet, IdentifierConfig, MatchingTarget, ReferenceInputSpec, Scenario, SystemMatrices, WeightVector
from .version import VERSION

__version__ = VERSION
