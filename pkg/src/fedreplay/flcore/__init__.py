"""Federated engine: clients, methods, server loop, metrics and the KL bound check."""

from fedreplay.flcore.client import (
	ClientState,
	LocalUpdate,
	end_session,
	generate_replay,
	load_session,
	local_update,
)
from fedreplay.flcore.methods import (
	DistillationPenalty,
	EwcPenalty,
	ProximalPenalty,
	Regularizer,
	ewc_fisher_estimate,
)
from fedreplay.flcore.metrics import (
	EncounterKey,
	eval_encountered_accuracy,
	eval_global_accuracy,
	synthetic_fidelity_kl,
)
from fedreplay.flcore.server import GlobalState, aggregate, run_experiment
from fedreplay.flcore.theory import Theorem1Report, theorem1_bound, theorem1_check

__all__ = [
	"ClientState",
	"DistillationPenalty",
	"EncounterKey",
	"EwcPenalty",
	"GlobalState",
	"LocalUpdate",
	"ProximalPenalty",
	"Regularizer",
	"Theorem1Report",
	"aggregate",
	"end_session",
	"eval_encountered_accuracy",
	"eval_global_accuracy",
	"ewc_fisher_estimate",
	"generate_replay",
	"load_session",
	"local_update",
	"run_experiment",
	"synthetic_fidelity_kl",
	"theorem1_bound",
	"theorem1_check",
]
