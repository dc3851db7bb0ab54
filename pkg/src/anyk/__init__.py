"""Any-k query evaluation over block-level density indexes."""

from .costmodel import DeviceProfile, plan_cost, profile_device, rand_io
from .errors import (AnykError, GenerationError, InfeasibleError, IngestError,
                     PlanBudgetError, ProfileError, QueryParseError,
                     UnknownValueError, ValidationError)
from .estimate import (BlockAggregates, EstimateReport, SampleDesign,
                       baseline_bitmap_random, block_aggregates, estimate_report,
                       ht_estimate, ht_variance, inclusion_prob,
                       joint_inclusion_prob, ratio_estimate, ratio_variance,
                       two_phase_sample)
from .grouped import (GroupDensitySet, GroupedResult, GroupState, JoinResult,
                      baseline_bitmap_combined, baseline_shared_scan,
                      combined_group_density, combined_group_map, grouped_anyk,
                      join_anyk)
from .index import (DensityMap, IndexSet, SortedDensityMap, bitmap_bytes,
                    build_indexes, density_map_bytes)
from .planners import (BlockPlan, ExecuteResult, PlannerStats,
                       baseline_bitmap_scan, baseline_disk_scan,
                       baseline_lossy_scan, density_optimal, execute,
                       fetch_order, hybrid, io_optimal, locality_optimal)
from .predicate import And, Leaf, Or
from .query_lang import QueryAst, parse_query, print_query
from .storage import (DEFAULT_BLOCK_SIZE, BlockStore, DimAttr, Schema,
                      SyntheticSpec, clustered_binary, clustered_categorical,
                      generate_clustered, ingest_csv, scan_valid, write_table,
                      zipf_probabilities)

__version__ = "0.1.0"
