from mmfusion.data.manifest import (
    COLUMNS,
    Manifest,
    load_records,
    read_image,
    read_manifest,
    write_image,
    write_manifest,
)
from mmfusion.data.preprocess import PAPER_FUNNEL, FilterReport, preprocess
from mmfusion.data.records import VIEWS, MultimodalRecord
from mmfusion.data.split import split, split_digest
from mmfusion.data.synthetic import SyntheticDataset, generate_synthetic, lesion_energy, write_dataset
from mmfusion.data.tabular import TOKEN_DIM, TabularEncoder
