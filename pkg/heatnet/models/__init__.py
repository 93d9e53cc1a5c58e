from heatnet.models.fminlp import (
    CombinatorialMINLP,
    FminlpConfig,
    enumerate_topologies,
    optimize_fminlp,
)
from heatnet.models.pnlp import (
    PenalizedNLP,
    PnlpConfig,
    optimize_pnlp,
    optimize_pnlp_multistart,
    repair_topology,
    slack_supplied,
    threshold_topology,
)
from heatnet.models.results import OptResult
