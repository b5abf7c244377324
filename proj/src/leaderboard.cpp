#include "ou/leaderboard.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace ou {

double memorization_score(double es, double em, double para_prob, double truth_ratio) {
    for (double x : {es, em, para_prob, truth_ratio})
        if (x < 0.0 || x > 1.0) throw InputError("memorization_score inputs must be in [0,1]");
    return harmonic_mean({1.0 - es, 1.0 - em, 1.0 - para_prob, 1.0 - truth_ratio});
}

double s_mia(double auc_unl, double auc_ret) {
    const double span = std::max(auc_ret, 1.0 - auc_ret);
    const double s = 1.0 - std::abs(auc_unl - auc_ret) / span;
    return std::clamp(s, 0.0, 1.0);
}

double privacy_score_from_aucs(const std::vector<double>& auc_unl,
                               const std::vector<double>& auc_ret) {
    if (auc_unl.size() != auc_ret.size() || auc_unl.empty())
        throw InputError("privacy_score: mismatched attack AUC lists");
    std::vector<double> s;
    for (size_t i = 0; i < auc_unl.size(); ++i) s.push_back(s_mia(auc_unl[i], auc_ret[i]));
    return harmonic_mean(s);
}

double privacy_score(const Model& unl_model, const Model& retain_model, const FactWorld& world,
                     const std::vector<int>& forget, const std::vector<int>& holdout,
                     double k_frac) {
    if (holdout.size() < 2) throw InputError("privacy_score requires a holdout of size >= 2");
    static const std::vector<std::string> attacks = {"loss", "zlib", "mink", "minkpp"};
    std::vector<double> unl, ret;
    for (const auto& a : attacks) {
        unl.push_back(mia_attack(a, unl_model, world, forget, holdout, k_frac).auc);
        ret.push_back(mia_attack(a, retain_model, world, forget, holdout, k_frac).auc);
    }
    return privacy_score_from_aucs(unl, ret);
}

double utility_score(double mu, double mu_init, double fluency) {
    if (mu_init <= 0.0) throw ConfigError("utility_score: init model utility must be > 0");
    return harmonic_mean({std::min(mu / mu_init, 1.0), fluency});
}

LeaderboardRow overall_row(const std::string& method, double mem, double priv, double utility) {
    for (double x : {mem, priv, utility})
        if (x < 0.0 || x > 1.0) throw InputError("overall_row inputs must be in [0,1]");
    LeaderboardRow row;
    row.method = method;
    row.mem = mem;
    row.priv = priv;
    row.utility = utility;
    row.agg = harmonic_mean({mem, priv, utility});
    return row;
}

double tuning_objective(double mem, double utility) { return harmonic_mean({mem, utility}); }

std::vector<LeaderboardRow> rank_rows(std::vector<LeaderboardRow> rows, RankingMode mode) {
    auto key = [mode](const LeaderboardRow& r) {
        return mode == RankingMode::Full ? r.agg : tuning_objective(r.mem, r.utility);
    };
    std::stable_sort(rows.begin(), rows.end(),
                     [&](const LeaderboardRow& a, const LeaderboardRow& b) { return key(a) > key(b); });
    return rows;
}

std::string render_table(const std::vector<LeaderboardRow>& rows, RankingMode mode) {
    std::ostringstream out;
    out << std::left << std::setw(14) << "method" << std::right << std::setw(8) << "agg"
        << std::setw(8) << "mem" << std::setw(8) << "priv" << std::setw(9) << "utility" << "\n";
    out << std::string(47, '-') << "\n";
    for (const auto& r : rows) {
        const double agg = mode == RankingMode::Full ? r.agg : tuning_objective(r.mem, r.utility);
        out << std::left << std::setw(14) << r.method << std::right << std::fixed
            << std::setprecision(3) << std::setw(8) << agg << std::setw(8) << r.mem << std::setw(8)
            << r.priv << std::setw(9) << r.utility << "\n";
    }
    return out.str();
}

}  // namespace ou
