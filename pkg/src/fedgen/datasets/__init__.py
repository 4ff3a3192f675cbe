from .store import load_dataset, write_dataset
from .swat import SwatPartitionConfig, load_swat, partition_frame
from .synthetic import FleetConfig, anomalous_fraction, generate_fleet

__all__ = [
    "FleetConfig", "SwatPartitionConfig", "anomalous_fraction", "generate_fleet",
    "load_dataset", "load_swat", "partition_frame", "write_dataset",
]
