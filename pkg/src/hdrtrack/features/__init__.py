from .matrix import BinaryFeatureMatrix, binarize, load_matrix, save_matrix
from .split import SplitSpec, split_dataset, split_indices, stratified_kfold
from .strdist import damerau_levenshtein, hamming_similarity, jaccard, name_similarity
from .vocab import HeaderVocabulary, VocabParams, build_vocabulary, fuzzy_merge_headers

__all__ = [
    "BinaryFeatureMatrix", "HeaderVocabulary", "SplitSpec", "VocabParams",
    "binarize", "build_vocabulary", "damerau_levenshtein", "fuzzy_merge_headers",
    "hamming_similarity", "jaccard", "load_matrix", "name_similarity", "save_matrix",
    "split_dataset", "split_indices", "stratified_kfold",
]
