"""Procedural refrigerator scenes, rasterized and annotated for object detection."""

from .annotate import AnnotateConfig, ObjectAnnotation, annotate_scene, parse_kitti, write_kitti
from .composer import Scene, SceneConfig, compose_scene
from .config import GenerationConfig, load_config
from .detector_math import (CoverageGrid, Detection, LossBatch, bbox_loss, coverage_loss, decode_detections,
                            encode_coverage, total_loss)
from .evalkit import EvalReport, evaluate, match_detections
from .geometry import BBox2D, Camera, Pose, iou, project
from .meshio import Mesh, ModelRepository, make_primitive, parse_obj, procedural_repository, serialize_obj
from .renderer import RenderOutput, render, render_solo

__version__ = "0.1.0"
