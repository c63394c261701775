"""Three-scale YOLOv3-tiny inference engine and evaluation toolkit."""

__version__ = "0.1.0"

from .anchors import AnchorSet, WHBox, assign_anchors_to_scales, iou_wh, kmeans_anchors
from .detect import (DecodedBox, Detection, PixelDetection, decode_all, decode_scale,
                     detect_pipeline, filter_confidence, nms)
from .evalkit import (GroundTruthBox, average_precision, iou_boxes, map_report,
                      match_detections, pr_curve)
from .graph import (Network, NetworkSpec, build_custom_tiny3, build_original_tiny, forward,
                    layer_output_shapes, load_darknet_weights, save_darknet_weights)
from .tensor import Shape3, Tensor3, tensor_create, tensor_index
