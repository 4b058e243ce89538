from .ConceptCorpus import ConceptCorpus, generate_concept_corpus
from .Profiles import UnitActivationProfile, collect_profiles
from .Detectors import DetectorRecord, chance_detectors, count_unique_concepts, find_detectors, iou_table, \
    unit_concept_iou
