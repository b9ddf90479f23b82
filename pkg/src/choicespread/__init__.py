"""choicespread: estimate individual adoption thresholds from choice-based
conjoint data (human or LLM-persona respondents) and run calibrated
threshold-contagion simulations on networks with mixed populations."""

__version__ = "0.1.0"

from .studies import (Attribute, ChoiceTask, DesignReport, ProductProfile,
                      Study, StudyDesign, aa_study, build_design,
                      enumerate_products, load_design, load_study_definition,
                      ps_study, save_design, validate_design)
from .coding import CodingSpec, IndividualParams, coding_for_study, encode_design
from .choices import (Choice, ChoiceDataset, NONE_CHOICE, RespondentProfile,
                      ingest_choices, random_ground_truth, simulate_choices,
                      split_holdout)
from .estimation import (McmcConfig, PosteriorDraws, fit_hb, hit_rate,
                         point_estimates)
from .thresholds import (NEVER, ThresholdMatrix, adoption_threshold,
                         attribute_importance, attribute_utility,
                         compute_threshold_matrix)
from .networks import (AgentAssignment, DiffusionResult, Network,
                       assign_population, diffuse, load_network,
                       network_metrics, run_diffusion, select_seeds,
                       stratified_network_sample)
from .survey import (BackendConfig, HttpChatBackend, MockBackend,
                     PromptTemplate, SurveyResponse, aa_prompt_template,
                     administer_survey, parse_choice, ps_prompt_template,
                     render_prompt)
from .sweep import (ResultRow, SummaryRow, SweepConfig, emit_report, run_sweep,
                    sample_products_by_threshold, summarize)

__all__ = [
    "Attribute", "ChoiceTask", "DesignReport", "ProductProfile", "Study",
    "StudyDesign", "aa_study", "build_design", "enumerate_products",
    "load_design", "load_study_definition", "ps_study", "save_design",
    "validate_design",
    "CodingSpec", "IndividualParams", "coding_for_study", "encode_design",
    "Choice", "ChoiceDataset", "NONE_CHOICE", "RespondentProfile",
    "ingest_choices", "random_ground_truth", "simulate_choices", "split_holdout",
    "McmcConfig", "PosteriorDraws", "fit_hb", "hit_rate", "point_estimates",
    "NEVER", "ThresholdMatrix", "adoption_threshold", "attribute_importance",
    "attribute_utility", "compute_threshold_matrix",
    "AgentAssignment", "DiffusionResult", "Network", "assign_population",
    "diffuse", "load_network", "network_metrics", "run_diffusion",
    "select_seeds", "stratified_network_sample",
    "BackendConfig", "HttpChatBackend", "MockBackend", "PromptTemplate",
    "SurveyResponse", "aa_prompt_template", "administer_survey", "parse_choice",
    "ps_prompt_template", "render_prompt",
    "ResultRow", "SummaryRow", "SweepConfig", "emit_report", "run_sweep",
    "sample_products_by_threshold", "summarize",
]
