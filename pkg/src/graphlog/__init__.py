"""Self-supervised graph representation learning with local-instance and
global-semantic (hierarchical prototype) structure."""

from .autodiff import Tensor, backward, cosine_similarity
from .checkpoint import Checkpoint
from .config import TrainConfig
from .data import SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .em import LatentChain, e_step_sample, energy, monitored_mb_loglik, nce_global_loss
from .gnn import GinParams, encode, init_gin
from .graph import Graph, GraphBatch, batch, make_correlated_pair, mask_attributes
from .local import LocalBatchView, graph_loss, local_loss, subgraph_loss
from .metrics import cluster_metrics, pca_project, roc_auc
from .optim import Adam, lr_schedule
from .prototypes import PrototypeForest, chain_vectors, init_forest, kmeans
from .trainer import Pretrainer, finetune, pretrain

__version__ = "0.1.0"
