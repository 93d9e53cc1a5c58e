import heatnet.abc
import heatnet.datasets
import heatnet.models
