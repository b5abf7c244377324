#pragma once

#include <string>
#include <vector>

#include "ou/metrics.hpp"
#include "ou/model.hpp"
#include "ou/worldgen.hpp"

namespace ou {

struct LeaderboardRow {
    std::string method;
    double agg = 0.0;
    double mem = 0.0;
    double priv = 0.0;
    double utility = 0.0;
    std::string hyperparams;
    std::string checkpoint;
};

// HM(1-ES, 1-EM, 1-ParaProb, 1-TruthRatio); higher = more forgotten.
double memorization_score(double es, double em, double para_prob, double truth_ratio);

// Alignment of one attack's AUC with the gold-standard retain model's AUC,
// scaled to [0,1] by the farthest the AUC could sit from the retain value.
double s_mia(double auc_unl, double auc_ret);

// HM of the four attack alignment scores (loss, zlib, mink, minkpp).
double privacy_score(const Model& unl_model, const Model& retain_model, const FactWorld& world,
                     const std::vector<int>& forget, const std::vector<int>& holdout,
                     double k_frac = 0.2);
double privacy_score_from_aucs(const std::vector<double>& auc_unl,
                               const std::vector<double>& auc_ret);

// HM(min(MU/MU_init, 1), fluency); the init model scores 1 by construction.
double utility_score(double mu, double mu_init, double fluency);

LeaderboardRow overall_row(const std::string& method, double mem, double priv, double utility);

// App-level validation objective: privacy metrics need oracle resources, so
// tuning selects on HM(memorization, utility) only.
double tuning_objective(double mem, double utility);

enum class RankingMode { Full, MemUtility };

// Rows sorted by the mode's aggregate, descending.
std::vector<LeaderboardRow> rank_rows(std::vector<LeaderboardRow> rows, RankingMode mode);

std::string render_table(const std::vector<LeaderboardRow>& rows, RankingMode mode);

}  // namespace ou
