"""apload: per-AP Wi-Fi load derivation, multi-step forecasting, int8
quantization, and deployment-cost accounting."""

__version__ = "0.1.0"

from .dataset_windows import (
    Normalizer,
    WindowConfig,
    WindowedDataset,
    build_ap_split,
    fit_normalizer,
    make_windows,
    normalize_dataset,
    split_holdout,
    window_count,
    windows_for_aps,
)
from .evaluation import (
    EPSILON_MB,
    EvalReport,
    GeneralizationExperimentConfig,
    GranularityExperimentConfig,
    emit_report,
    evaluate_predictions,
    mape,
    mape_cdf,
    run_generalization_experiment,
    run_granularity_experiment,
)
from .forecasters import (
    ArimaError,
    ArimaForecaster,
    ArimaModel,
    HyperConfig,
    ModelMeta,
    NeuralForecaster,
    NonStationaryWarning,
    PersistenceModel,
    arima_fit,
    arima_forecast,
    arima_grid_search,
    build_network,
    load_model,
    persistence_forecast,
    save_model,
    train_neural,
)
from .load_derivation import (
    MB,
    LoadSeries,
    aggregate_window,
    derive_load_series,
    read_series_csv,
    session_step_load,
    write_series_csv,
)
from .profiler import (
    CadenceConfig,
    ResourceProfile,
    measure,
    monthly_energy,
    monthly_multipliers,
)
from .quantization import (
    QuantizedModel,
    calibrate,
    load_quantized,
    quant_infer,
    quantize_model,
    save_quantized,
)
from .trace_ingest import (
    AssociationRecord,
    ParseError,
    ParseResult,
    RecordSet,
    SynthConfig,
    generate_synthetic,
    parse_records,
    parse_records_file,
    serialize_records,
    validate_records,
)

__all__ = [name for name in dir() if not name.startswith("_")]
