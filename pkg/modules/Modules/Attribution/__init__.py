from .AttributionMap import AttributionMap, normalize
from .GradCAM import gradcam
from .IBA import FeatureStats, InformationBottleneck, iba, iba_fit_statistics
from .Attributor import attribute
