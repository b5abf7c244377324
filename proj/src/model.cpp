#include "ou/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "ou/rng.hpp"

namespace ou {

namespace {

constexpr double kRmsEps = 1e-6;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    const double phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return phi + x * pdf;
}

// y = x * (mean(x^2) + eps)^(-1/2); returns the inverse rms for the backward pass.
double rmsnorm_row(const double* x, double* y, int d) {
    double ms = 0.0;
    for (int i = 0; i < d; ++i) ms += x[i] * x[i];
    const double inv = 1.0 / std::sqrt(ms / d + kRmsEps);
    for (int i = 0; i < d; ++i) y[i] = x[i] * inv;
    return inv;
}

// dx += s*dy - x * (s^3/d) * (x·dy)
void rmsnorm_backward_row(const double* x, const double* dy, double inv, int d, double* dx) {
    double dot = 0.0;
    for (int i = 0; i < d; ++i) dot += x[i] * dy[i];
    const double k = inv * inv * inv * dot / d;
    for (int i = 0; i < d; ++i) dx[i] += inv * dy[i] - k * x[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// config / params
// ---------------------------------------------------------------------------

void TransformerConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (d_model < 2) throw ConfigError("d_model must be >= 2");
    if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    if (n_heads < 1 || d_model % n_heads != 0)
        throw ConfigError("n_heads must divide d_model");
    if (max_seq < 2) throw ConfigError("max_seq must be >= 2");
}

void Params::init_shapes(const TransformerConfig& cfg) {
    wte = Matrix(cfg.vocab_size, cfg.d_model);
    wpe = Matrix(cfg.max_seq, cfg.d_model);
    head = Matrix(cfg.vocab_size, cfg.d_model);
    blocks.assign(static_cast<size_t>(cfg.n_layers), BlockParams{});
    for (auto& b : blocks) {
        b.wq = Matrix(cfg.d_model, cfg.d_model);
        b.wk = Matrix(cfg.d_model, cfg.d_model);
        b.wv = Matrix(cfg.d_model, cfg.d_model);
        b.wo = Matrix(cfg.d_model, cfg.d_model);
        b.w1 = Matrix(cfg.ff(), cfg.d_model);
        b.w2 = Matrix(cfg.d_model, cfg.ff());
    }
}

void Params::zero() {
    for_each_tensor([](const std::string&, Matrix& m) { m.zero(); });
}

size_t Params::num_scalars() const {
    size_t n = 0;
    for_each_tensor([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
}

std::string role_name(ModelRole role) {
    switch (role) {
        case ModelRole::Target: return "target";
        case ModelRole::Retain: return "retain";
        case ModelRole::Unlearned: return "unlearned";
        case ModelRole::ProbeModified: return "probe-modified";
    }
    return "target";
}

ModelRole role_from_name(const std::string& name) {
    if (name == "target") return ModelRole::Target;
    if (name == "retain") return ModelRole::Retain;
    if (name == "unlearned") return ModelRole::Unlearned;
    if (name == "probe-modified") return ModelRole::ProbeModified;
    throw InputError("unknown model role: " + name);
}

Model::Model(const TransformerConfig& cfg, uint64_t init_seed) : seed(init_seed), cfg_(cfg) {
    cfg_.validate();
    p_.init_shapes(cfg_);
    Rng rng(init_seed);
    p_.for_each_tensor([&](const std::string&, Matrix& m) {
        for (auto& w : m.a) w = rng.normal(0.0, cfg_.init_std);
    });
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

void Model::forward_into(const std::vector<int>& tokens, ForwardCache& fc) const {
    const int t_len = static_cast<int>(tokens.size());
    const int d = cfg_.d_model;
    const int ff = cfg_.ff();
    const int n_heads = cfg_.n_heads;
    const int dh = d / n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    if (t_len == 0) throw InputError("empty token sequence");
    if (t_len > cfg_.max_seq)
        throw InputError("sequence length " + std::to_string(t_len) + " exceeds max_seq " +
                         std::to_string(cfg_.max_seq));
    for (int t : tokens)
        if (t < 0 || t >= cfg_.vocab_size)
            throw InputError("unknown token id " + std::to_string(t));

    fc.tokens = tokens;
    fc.x0 = Matrix(t_len, d);
    for (int j = 0; j < t_len; ++j) {
        const double* te = p_.wte.row(tokens[static_cast<size_t>(j)]);
        const double* pe = p_.wpe.row(j);
        double* x = fc.x0.row(j);
        for (int i = 0; i < d; ++i) x[i] = te[i] + pe[i];
    }

    fc.layers.assign(static_cast<size_t>(cfg_.n_layers), LayerCache{});
    Matrix x = fc.x0;

    for (int b = 0; b < cfg_.n_layers; ++b) {
        LayerCache& lc = fc.layers[static_cast<size_t>(b)];
        const BlockParams& bp = p_.blocks[static_cast<size_t>(b)];
        lc.x_in = x;
        lc.a_norm = Matrix(t_len, d);
        lc.inv_rms1.resize(static_cast<size_t>(t_len));
        for (int j = 0; j < t_len; ++j)
            lc.inv_rms1[static_cast<size_t>(j)] = rmsnorm_row(lc.x_in.row(j), lc.a_norm.row(j), d);

        lc.q = Matrix(t_len, d);
        lc.k = Matrix(t_len, d);
        lc.v = Matrix(t_len, d);
        for (int j = 0; j < t_len; ++j) {
            matvec(bp.wq, lc.a_norm.row(j), lc.q.row(j));
            matvec(bp.wk, lc.a_norm.row(j), lc.k.row(j));
            matvec(bp.wv, lc.a_norm.row(j), lc.v.row(j));
        }

        lc.att.assign(static_cast<size_t>(n_heads), Matrix(t_len, t_len));
        lc.ctx = Matrix(t_len, d);
        for (int h = 0; h < n_heads; ++h) {
            Matrix& att = lc.att[static_cast<size_t>(h)];
            const int hs = h * dh;
            for (int j = 0; j < t_len; ++j) {
                double maxv = -std::numeric_limits<double>::infinity();
                for (int i = 0; i <= j; ++i) {
                    double s = 0.0;
                    const double* qr = lc.q.row(j) + hs;
                    const double* kr = lc.k.row(i) + hs;
                    for (int u = 0; u < dh; ++u) s += qr[u] * kr[u];
                    s *= att_scale;
                    att.at(j, i) = s;
                    maxv = std::max(maxv, s);
                }
                double denom = 0.0;
                for (int i = 0; i <= j; ++i) {
                    const double e = std::exp(att.at(j, i) - maxv);
                    att.at(j, i) = e;
                    denom += e;
                }
                const double inv = 1.0 / denom;
                double* ctx = lc.ctx.row(j) + hs;
                for (int i = 0; i <= j; ++i) {
                    att.at(j, i) *= inv;
                    const double w = att.at(j, i);
                    const double* vr = lc.v.row(i) + hs;
                    for (int u = 0; u < dh; ++u) ctx[u] += w * vr[u];
                }
            }
        }

        lc.x_mid = Matrix(t_len, d);
        for (int j = 0; j < t_len; ++j) {
            double* xm = lc.x_mid.row(j);
            matvec(bp.wo, lc.ctx.row(j), xm);
            const double* xi = lc.x_in.row(j);
            for (int i = 0; i < d; ++i) xm[i] += xi[i];
        }

        lc.m_norm = Matrix(t_len, d);
        lc.inv_rms2.resize(static_cast<size_t>(t_len));
        for (int j = 0; j < t_len; ++j)
            lc.inv_rms2[static_cast<size_t>(j)] = rmsnorm_row(lc.x_mid.row(j), lc.m_norm.row(j), d);

        lc.h1 = Matrix(t_len, ff);
        lc.act = Matrix(t_len, ff);
        lc.x_out = Matrix(t_len, d);
        for (int j = 0; j < t_len; ++j) {
            matvec(bp.w1, lc.m_norm.row(j), lc.h1.row(j));
            for (int i = 0; i < ff; ++i) lc.act.at(j, i) = gelu(lc.h1.at(j, i));
            double* xo = lc.x_out.row(j);
            matvec(bp.w2, lc.act.row(j), xo);
            const double* xm = lc.x_mid.row(j);
            for (int i = 0; i < d; ++i) xo[i] += xm[i];
        }
        x = lc.x_out;
    }

    fc.f_norm = Matrix(t_len, d);
    fc.inv_rmsf.resize(static_cast<size_t>(t_len));
    for (int j = 0; j < t_len; ++j)
        fc.inv_rmsf[static_cast<size_t>(j)] = rmsnorm_row(x.row(j), fc.f_norm.row(j), d);

    fc.logits = Matrix(t_len, cfg_.vocab_size);
    for (int j = 0; j < t_len; ++j) matvec(p_.head, fc.f_norm.row(j), fc.logits.row(j));

    if (probe) probe_logits(fc, fc.logits);
}

// Replaces the logits with probe-head read-outs of rmsnorm(hidden at probe->layer).
void Model::probe_logits(const ForwardCache& fc, Matrix& out) const {
    const int t_len = fc.seq_len();
    const int d = cfg_.d_model;
    if (probe->layer < 0 || probe->layer >= cfg_.n_layers)
        throw ConfigError("probe layer out of range");
    if (probe->w.rows != cfg_.vocab_size || probe->w.cols != d)
        throw ConfigError("probe head dimensions do not match model");
    const Matrix& hidden = fc.layers[static_cast<size_t>(probe->layer)].x_out;
    std::vector<double> normed(static_cast<size_t>(d));
    for (int j = 0; j < t_len; ++j) {
        rmsnorm_row(hidden.row(j), normed.data(), d);
        matvec(probe->w, normed.data(), out.row(j));
    }
}

ForwardCache Model::forward(const std::vector<int>& tokens) const {
    ForwardCache fc;
    forward_into(tokens, fc);
    return fc;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void Model::backward(const ForwardCache& fc, const Matrix& d_logits, const HiddenGrad* hg,
                     Params& grads) const {
    const int t_len = fc.seq_len();
    const int d = cfg_.d_model;
    const int ff = cfg_.ff();
    const int n_heads = cfg_.n_heads;
    const int dh = d / n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool have_logits = d_logits.rows > 0;

    if (probe) throw ConfigError("backward through a probe-modified handle is not supported");
    if (have_logits && (d_logits.rows != t_len || d_logits.cols != cfg_.vocab_size))
        throw InputError("d_logits shape mismatch");
    if (hg && (hg->layer < 0 || hg->layer >= cfg_.n_layers))
        throw InputError("hidden-grad layer out of range");

    Matrix dx(t_len, d);
    if (have_logits) {
        const Matrix& x_last = fc.layers.back().x_out;
        Matrix d_fnorm(t_len, d);
        for (int j = 0; j < t_len; ++j) {
            outer_accum(grads.head, d_logits.row(j), fc.f_norm.row(j));
            matvec_t_accum(p_.head, d_logits.row(j), d_fnorm.row(j));
            rmsnorm_backward_row(x_last.row(j), d_fnorm.row(j), fc.inv_rmsf[static_cast<size_t>(j)],
                                 d, dx.row(j));
        }
    }

    std::vector<double> tmp_row(static_cast<size_t>(std::max(d, ff)));

    for (int b = cfg_.n_layers - 1; b >= 0; --b) {
        const LayerCache& lc = fc.layers[static_cast<size_t>(b)];
        const BlockParams& bp = p_.blocks[static_cast<size_t>(b)];
        BlockParams& gb = grads.blocks[static_cast<size_t>(b)];

        if (hg && hg->layer == b) {
            for (int j = 0; j < t_len; ++j) {
                const double* src = hg->d_hidden.row(j);
                double* dst = dx.row(j);
                for (int i = 0; i < d; ++i) dst[i] += src[i];
            }
        }

        // MLP
        Matrix d_xmid(t_len, d);
        for (int j = 0; j < t_len; ++j) {
            const double* dxo = dx.row(j);
            outer_accum(gb.w2, dxo, lc.act.row(j));
            std::fill(tmp_row.begin(), tmp_row.begin() + ff, 0.0);
            matvec_t_accum(bp.w2, dxo, tmp_row.data());  // d_act
            for (int i = 0; i < ff; ++i) tmp_row[static_cast<size_t>(i)] *= gelu_grad(lc.h1.at(j, i));
            outer_accum(gb.w1, tmp_row.data(), lc.m_norm.row(j));
            std::vector<double> d_mnorm(static_cast<size_t>(d), 0.0);
            matvec_t_accum(bp.w1, tmp_row.data(), d_mnorm.data());
            double* dxm = d_xmid.row(j);
            for (int i = 0; i < d; ++i) dxm[i] = dxo[i];  // residual
            rmsnorm_backward_row(lc.x_mid.row(j), d_mnorm.data(), lc.inv_rms2[static_cast<size_t>(j)],
                                 d, dxm);
        }

        // attention output projection
        Matrix d_ctx(t_len, d);
        for (int j = 0; j < t_len; ++j) {
            outer_accum(gb.wo, d_xmid.row(j), lc.ctx.row(j));
            matvec_t_accum(bp.wo, d_xmid.row(j), d_ctx.row(j));
        }

        Matrix d_q(t_len, d), d_k(t_len, d), d_v(t_len, d);
        for (int h = 0; h < n_heads; ++h) {
            const Matrix& att = lc.att[static_cast<size_t>(h)];
            const int hs = h * dh;
            for (int j = 0; j < t_len; ++j) {
                const double* dctx = d_ctx.row(j) + hs;
                // d_att and softmax backward over row j
                double dot = 0.0;
                std::vector<double> d_att(static_cast<size_t>(j) + 1);
                for (int i = 0; i <= j; ++i) {
                    const double* vr = lc.v.row(i) + hs;
                    double da = 0.0;
                    for (int u = 0; u < dh; ++u) da += dctx[u] * vr[u];
                    d_att[static_cast<size_t>(i)] = da;
                    dot += att.at(j, i) * da;
                    double* dvr = d_v.row(i) + hs;
                    const double w = att.at(j, i);
                    for (int u = 0; u < dh; ++u) dvr[u] += w * dctx[u];
                }
                double* dqr = d_q.row(j) + hs;
                for (int i = 0; i <= j; ++i) {
                    const double ds = att.at(j, i) * (d_att[static_cast<size_t>(i)] - dot) * att_scale;
                    if (ds == 0.0) continue;
                    const double* kr = lc.k.row(i) + hs;
                    double* dkr = d_k.row(i) + hs;
                    const double* qr = lc.q.row(j) + hs;
                    for (int u = 0; u < dh; ++u) {
                        dqr[u] += ds * kr[u];
                        dkr[u] += ds * qr[u];
                    }
                }
            }
        }

        // q,k,v projections and first norm
        Matrix d_anorm(t_len, d);
        for (int j = 0; j < t_len; ++j) {
            outer_accum(gb.wq, d_q.row(j), lc.a_norm.row(j));
            outer_accum(gb.wk, d_k.row(j), lc.a_norm.row(j));
            outer_accum(gb.wv, d_v.row(j), lc.a_norm.row(j));
            matvec_t_accum(bp.wq, d_q.row(j), d_anorm.row(j));
            matvec_t_accum(bp.wk, d_k.row(j), d_anorm.row(j));
            matvec_t_accum(bp.wv, d_v.row(j), d_anorm.row(j));
        }

        for (int j = 0; j < t_len; ++j) {
            double* dxi = d_xmid.row(j);  // reuse: residual into x_in
            rmsnorm_backward_row(lc.x_in.row(j), d_anorm.row(j), lc.inv_rms1[static_cast<size_t>(j)],
                                 d, dxi);
        }
        dx = d_xmid;
    }

    for (int j = 0; j < t_len; ++j) {
        const double* dxj = dx.row(j);
        double* te = grads.wte.row(fc.tokens[static_cast<size_t>(j)]);
        double* pe = grads.wpe.row(j);
        for (int i = 0; i < d; ++i) {
            te[i] += dxj[i];
            pe[i] += dxj[i];
        }
    }
}

// ---------------------------------------------------------------------------
// scoring
// ---------------------------------------------------------------------------

std::vector<double> Model::log_softmax_row(const Matrix& logits, int pos) {
    const int v = logits.cols;
    const double* row = logits.row(pos);
    double maxv = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < v; ++i) maxv = std::max(maxv, row[i]);
    double denom = 0.0;
    for (int i = 0; i < v; ++i) denom += std::exp(row[i] - maxv);
    const double lse = maxv + std::log(denom);
    std::vector<double> out(static_cast<size_t>(v));
    for (int i = 0; i < v; ++i) out[static_cast<size_t>(i)] = row[i] - lse;
    return out;
}

std::vector<double> Model::token_logprobs(const std::vector<int>& prompt,
                                          const std::vector<int>& target) const {
    if (target.empty()) throw InputError("target must contain at least one token");
    std::vector<int> seq;
    seq.reserve(1 + prompt.size() + target.size());
    seq.push_back(cfg_.bos_id);
    seq.insert(seq.end(), prompt.begin(), prompt.end());
    seq.insert(seq.end(), target.begin(), target.end());

    const ForwardCache fc = forward(seq);
    std::vector<double> out;
    out.reserve(target.size());
    const int base = static_cast<int>(prompt.size());  // position predicting target[0]
    for (size_t i = 0; i < target.size(); ++i) {
        const auto ls = log_softmax_row(fc.logits, base + static_cast<int>(i));
        out.push_back(ls[static_cast<size_t>(target[i])]);
    }
    return out;
}

double Model::answer_score(const std::vector<int>& prompt, const std::vector<int>& target,
                           bool length_normalized) const {
    const auto lps = token_logprobs(prompt, target);
    double sum = 0.0;
    for (double lp : lps) sum += lp;
    return std::exp(length_normalized ? sum / static_cast<double>(lps.size()) : sum);
}

std::vector<int> Model::greedy_generate(const std::vector<int>& prompt, int max_new_tokens) const {
    if (max_new_tokens < 0) throw InputError("max_new_tokens must be >= 0");
    std::vector<int> seq;
    seq.reserve(1 + prompt.size() + static_cast<size_t>(max_new_tokens));
    seq.push_back(cfg_.bos_id);
    seq.insert(seq.end(), prompt.begin(), prompt.end());

    std::vector<int> out;
    for (int step = 0; step < max_new_tokens; ++step) {
        if (static_cast<int>(seq.size()) >= cfg_.max_seq) break;
        const ForwardCache fc = forward(seq);
        const double* row = fc.logits.row(fc.seq_len() - 1);
        int best = 0;
        for (int i = 1; i < cfg_.vocab_size; ++i)
            if (row[i] > row[best]) best = i;  // strict > keeps the lowest id on ties
        if (best == cfg_.eos_id) break;
        out.push_back(best);
        seq.push_back(best);
    }
    return out;
}

Matrix Model::hidden_states(const std::vector<int>& tokens, int layer) const {
    if (layer < 0 || layer >= cfg_.n_layers)
        throw InputError("layer " + std::to_string(layer) + " out of range [0, " +
                         std::to_string(cfg_.n_layers) + ")");
    const ForwardCache fc = forward(tokens);
    return fc.layers[static_cast<size_t>(layer)].x_out;
}

// ---------------------------------------------------------------------------
// quantization
// ---------------------------------------------------------------------------

Model Model::quantize_dequantize(int bits) const {
    if (bits != 4 && bits != 8) throw InputError("bits must be 4 or 8");
    Model out = *this;
    const double levels = static_cast<double>((1 << bits) - 1);
    out.p_.for_each_tensor([&](const std::string&, Matrix& m) {
        double lo = m.a.empty() ? 0.0 : m.a[0];
        double hi = lo;
        for (double w : m.a) {
            lo = std::min(lo, w);
            hi = std::max(hi, w);
        }
        if (hi == lo) return;  // constant tensor: passthrough
        const double scale = (hi - lo) / levels;
        for (double& w : m.a) {
            const double q = std::round((w - lo) / scale);
            w = lo + q * scale;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// misc
// ---------------------------------------------------------------------------

double Model::mean_nll(const std::vector<std::vector<int>>& corpus) const {
    double total = 0.0;
    long count = 0;
    for (const auto& doc : corpus) {
        if (doc.size() < 2) continue;
        const ForwardCache fc = forward(doc);
        for (size_t j = 0; j + 1 < doc.size(); ++j) {
            const auto ls = log_softmax_row(fc.logits, static_cast<int>(j));
            total -= ls[static_cast<size_t>(doc[j + 1])];
            ++count;
        }
    }
    if (count == 0) throw InputError("corpus has no scorable positions");
    return total / static_cast<double>(count);
}

uint64_t Model::param_checksum() const {
    uint64_t h = 0xcbf29ce484222325ull;
    p_.for_each_tensor([&](const std::string& name, const Matrix& m) {
        h = fnv1a(name, h);
        h = fnv1a(m.a.data(), m.a.size() * sizeof(double), h);
    });
    return h;
}

void Model::save(const std::string& dir, const std::string& config_hash,
                 uint64_t vocab_hash) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    std::ofstream bin(fs::path(dir) / "params.bin", std::ios::binary);
    if (!bin) throw InputError("cannot write checkpoint blob in " + dir);
    const char magic[8] = {'O', 'U', 'C', 'K', 'P', 'T', '0', '1'};
    bin.write(magic, 8);
    int32_t n_tensors = 0;
    p_.for_each_tensor([&](const std::string&, const Matrix&) { ++n_tensors; });
    bin.write(reinterpret_cast<const char*>(&n_tensors), 4);
    p_.for_each_tensor([&](const std::string& name, const Matrix& m) {
        const int32_t nlen = static_cast<int32_t>(name.size());
        bin.write(reinterpret_cast<const char*>(&nlen), 4);
        bin.write(name.data(), nlen);
        const int32_t r = m.rows, c = m.cols;
        bin.write(reinterpret_cast<const char*>(&r), 4);
        bin.write(reinterpret_cast<const char*>(&c), 4);
        bin.write(reinterpret_cast<const char*>(m.a.data()),
                  static_cast<std::streamsize>(m.a.size() * sizeof(double)));
    });
    bin.close();

    nlohmann::json meta;
    meta["format_version"] = kFormatVersion;
    meta["code_version"] = std::string(kCodeVersion);
    meta["seed"] = seed;
    meta["config_hash"] = config_hash;
    meta["vocab_hash"] = hash_hex(vocab_hash);
    meta["role"] = role_name(role);
    meta["arch"] = {{"vocab_size", cfg_.vocab_size}, {"d_model", cfg_.d_model},
                    {"n_layers", cfg_.n_layers},     {"n_heads", cfg_.n_heads},
                    {"d_ff", cfg_.d_ff},             {"max_seq", cfg_.max_seq},
                    {"bos_id", cfg_.bos_id},   {"eos_id", cfg_.eos_id},         {"init_std", cfg_.init_std}};
    std::ofstream mj(fs::path(dir) / "meta.json");
    mj << meta.dump(2) << "\n";
}

Model Model::load(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mj(fs::path(dir) / "meta.json");
    if (!mj) throw InputError("missing meta.json in " + dir);
    nlohmann::json meta = nlohmann::json::parse(mj);
    if (meta.value("format_version", -1) != kFormatVersion)
        throw InputError("unsupported checkpoint format_version in " + dir);

    TransformerConfig cfg;
    const auto& arch = meta.at("arch");
    cfg.vocab_size = arch.at("vocab_size").get<int>();
    cfg.d_model = arch.at("d_model").get<int>();
    cfg.n_layers = arch.at("n_layers").get<int>();
    cfg.n_heads = arch.at("n_heads").get<int>();
    cfg.d_ff = arch.at("d_ff").get<int>();
    cfg.max_seq = arch.at("max_seq").get<int>();
    cfg.bos_id = arch.at("bos_id").get<int>();
    cfg.eos_id = arch.at("eos_id").get<int>();
    cfg.init_std = arch.at("init_std").get<double>();

    Model m(cfg, meta.value("seed", 0ull));
    m.seed = meta.value("seed", 0ull);
    m.role = role_from_name(meta.at("role").get<std::string>());

    std::ifstream bin(fs::path(dir) / "params.bin", std::ios::binary);
    if (!bin) throw InputError("missing params.bin in " + dir);
    char magic[8];
    bin.read(magic, 8);
    if (std::memcmp(magic, "OUCKPT01", 8) != 0) throw InputError("bad checkpoint magic in " + dir);
    int32_t n_tensors = 0;
    bin.read(reinterpret_cast<char*>(&n_tensors), 4);

    for (int32_t t = 0; t < n_tensors; ++t) {
        int32_t nlen = 0;
        bin.read(reinterpret_cast<char*>(&nlen), 4);
        std::string name(static_cast<size_t>(nlen), '\0');
        bin.read(name.data(), nlen);
        int32_t r = 0, c = 0;
        bin.read(reinterpret_cast<char*>(&r), 4);
        bin.read(reinterpret_cast<char*>(&c), 4);
        bool found = false;
        m.p_.for_each_tensor([&](const std::string& n, Matrix& mat) {
            if (n != name) return;
            if (mat.rows != r || mat.cols != c)
                throw InputError("tensor shape mismatch for " + name + " in " + dir);
            bin.read(reinterpret_cast<char*>(mat.a.data()),
                     static_cast<std::streamsize>(mat.a.size() * sizeof(double)));
            found = true;
        });
        if (!found) throw InputError("unexpected tensor " + name + " in " + dir);
    }
    if (!bin) throw InputError("truncated checkpoint blob in " + dir);
    return m;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (optimizer_name != "adamw" && optimizer_name != "sgd")
        throw ConfigError("unknown optimizer: " + optimizer_name);
}

Optimizer::Optimizer(const TransformerConfig& arch, const TrainConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    m_.init_shapes(arch);
    v_.init_shapes(arch);
}

double clip_grad_norm(Params& grads, double max_norm) {
    double sq = 0.0;
    grads.for_each_tensor([&](const std::string&, Matrix& m) {
        for (double g : m.a) sq += g * g;
    });
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        grads.for_each_tensor([&](const std::string&, Matrix& m) {
            for (double& g : m.a) g *= s;
        });
    }
    return norm;
}

void Optimizer::step(Model& model, Params& grads, const std::vector<std::string>* mask) {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));

    auto allowed = [&](const std::string& name) {
        if (!mask) return true;
        return std::find(mask->begin(), mask->end(), name) != mask->end();
    };

    model.params().for_each_tensor([&](const std::string& name, Matrix& w) {
        Matrix* gm = nullptr;
        Matrix* mm = nullptr;
        Matrix* vm = nullptr;
        grads.for_each_tensor([&](const std::string& n, Matrix& m) {
            if (n == name) gm = &m;
        });
        m_.for_each_tensor([&](const std::string& n, Matrix& m) {
            if (n == name) mm = &m;
        });
        v_.for_each_tensor([&](const std::string& n, Matrix& m) {
            if (n == name) vm = &m;
        });
        if (!allowed(name)) {
            gm->zero();
            return;
        }
        if (cfg_.optimizer_name == "sgd") {
            for (size_t i = 0; i < w.a.size(); ++i) w.a[i] -= cfg_.learning_rate * gm->a[i];
        } else {
            for (size_t i = 0; i < w.a.size(); ++i) {
                const double g = gm->a[i];
                mm->a[i] = b1 * mm->a[i] + (1.0 - b1) * g;
                vm->a[i] = b2 * vm->a[i] + (1.0 - b2) * g * g;
                const double mh = mm->a[i] / bc1;
                const double vh = vm->a[i] / bc2;
                w.a[i] -= cfg_.learning_rate * (mh / (std::sqrt(vh) + eps) + cfg_.weight_decay * w.a[i]);
            }
        }
        gm->zero();
    });
}

Model train_lm(const std::vector<std::vector<int>>& corpus, const TrainConfig& cfg,
               const Model& init) {
    cfg.validate();
    if (corpus.empty()) throw InputError("training corpus is empty");
    for (const auto& doc : corpus) {
        if (doc.size() < 2) throw InputError("corpus document shorter than 2 tokens");
        for (int t : doc)
            if (t < 0 || t >= init.config().vocab_size)
                throw InputError("corpus token id " + std::to_string(t) + " not in vocabulary");
    }

    Model model = init;
    if (cfg.epochs == 0) return model;

    Optimizer opt(model.config(), cfg);
    Params grads;
    grads.init_shapes(model.config());

    std::vector<size_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    long step_index = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(cfg.seed ^ (0x9e3779b97f4a7c15ull + static_cast<uint64_t>(epoch)));
        rng.shuffle(order);

        size_t pos = 0;
        while (pos < order.size()) {
            const size_t bsz = std::min(static_cast<size_t>(cfg.batch_size), order.size() - pos);
            double batch_loss = 0.0;
            for (size_t bi = 0; bi < bsz; ++bi) {
                const auto& doc = corpus[order[pos + bi]];
                const ForwardCache fc = model.forward(doc);
                const int n_pred = fc.seq_len() - 1;
                Matrix d_logits(fc.seq_len(), model.config().vocab_size);
                const double w = 1.0 / (static_cast<double>(bsz) * n_pred);
                for (int j = 0; j < n_pred; ++j) {
                    const auto ls = Model::log_softmax_row(fc.logits, j);
                    const int gold = doc[static_cast<size_t>(j) + 1];
                    batch_loss -= ls[static_cast<size_t>(gold)] * w;
                    double* dl = d_logits.row(j);
                    for (int v = 0; v < model.config().vocab_size; ++v)
                        dl[v] = std::exp(ls[static_cast<size_t>(v)]) * w;
                    dl[gold] -= w;
                }
                model.backward(fc, d_logits, nullptr, grads);
            }
            if (!std::isfinite(batch_loss))
                throw NumericError("non-finite loss at training step " + std::to_string(step_index) +
                                   " (epoch " + std::to_string(epoch) + ")");
            if (cfg.grad_clip > 0.0) clip_grad_norm(grads, cfg.grad_clip);
            opt.step(model, grads);
            pos += bsz;
            ++step_index;
        }
    }
    return model;
}

Model train_lm(const std::vector<std::vector<int>>& corpus, const TrainConfig& cfg,
               const TransformerConfig& arch) {
    Model init(arch, cfg.seed);
    return train_lm(corpus, cfg, init);
}

}  // namespace ou
