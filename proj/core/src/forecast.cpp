#include "rackctl/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "rackctl/csv.hpp"
#include "rackctl/errors.hpp"

namespace rackctl {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

std::size_t ForecastModel::parameter_count() const {
    return w_input.size() + w_recur.size() + bias.size() + w_head.size() + 1;
}

ForecastModel ForecastModel::naive(int lookback) {
    ForecastModel m;
    m.kind = ForecastKind::Naive;
    m.lookback = std::max(1, lookback);
    return m;
}

std::vector<double> pack_parameters(const ForecastModel& m) {
    std::vector<double> p;
    p.reserve(m.parameter_count());
    p.insert(p.end(), m.w_input.begin(), m.w_input.end());
    p.insert(p.end(), m.w_recur.begin(), m.w_recur.end());
    p.insert(p.end(), m.bias.begin(), m.bias.end());
    p.insert(p.end(), m.w_head.begin(), m.w_head.end());
    p.push_back(m.bias_head);
    return p;
}

void unpack_parameters(ForecastModel& m, const std::vector<double>& p) {
    if (p.size() != m.parameter_count())
        throw DimensionError("forecast model: parameter vector size mismatch");
    size_t k = 0;
    for (auto& v : m.w_input) v = p[k++];
    for (auto& v : m.w_recur) v = p[k++];
    for (auto& v : m.bias) v = p[k++];
    for (auto& v : m.w_head) v = p[k++];
    m.bias_head = p[k];
}

// Forward pass over one standardized window; returns the standardized output.
// When caches is non-null the per-step activations are stored for BPTT.
namespace {

struct StepCache {
    std::vector<double> x;          // input_dim
    std::vector<double> gate_i, gate_f, gate_g, gate_o;
    std::vector<double> cell, cell_tanh, hidden_out, hidden_prev, cell_prev;
};

double lstm_forward(const ForecastModel& m, const std::vector<double>& window_inputs,
                    std::vector<StepCache>* caches) {
    const int H = m.hidden;
    const int D = ForecastModel::input_dim;
    const int T = static_cast<int>(window_inputs.size()) / D;
    std::vector<double> h(H, 0.0), c(H, 0.0);

    for (int t = 0; t < T; ++t) {
        StepCache sc;
        sc.x.assign(window_inputs.begin() + t * D, window_inputs.begin() + (t + 1) * D);
        sc.hidden_prev = h;
        sc.cell_prev = c;
        sc.gate_i.resize(H);
        sc.gate_f.resize(H);
        sc.gate_g.resize(H);
        sc.gate_o.resize(H);
        sc.cell.resize(H);
        sc.cell_tanh.resize(H);
        sc.hidden_out.resize(H);
        for (int j = 0; j < H; ++j) {
            double zi = m.bias[0 * H + j], zf = m.bias[1 * H + j], zg = m.bias[2 * H + j],
                   zo = m.bias[3 * H + j];
            for (int d = 0; d < D; ++d) {
                const double x = sc.x[d];
                zi += m.w_input[(0 * H + j) * D + d] * x;
                zf += m.w_input[(1 * H + j) * D + d] * x;
                zg += m.w_input[(2 * H + j) * D + d] * x;
                zo += m.w_input[(3 * H + j) * D + d] * x;
            }
            for (int k = 0; k < H; ++k) {
                const double hp = sc.hidden_prev[k];
                zi += m.w_recur[(0 * H + j) * H + k] * hp;
                zf += m.w_recur[(1 * H + j) * H + k] * hp;
                zg += m.w_recur[(2 * H + j) * H + k] * hp;
                zo += m.w_recur[(3 * H + j) * H + k] * hp;
            }
            const double gi = sigmoid(zi), gf = sigmoid(zf), gg = std::tanh(zg), go = sigmoid(zo);
            const double cc = gf * sc.cell_prev[j] + gi * gg;
            const double ct = std::tanh(cc);
            sc.gate_i[j] = gi;
            sc.gate_f[j] = gf;
            sc.gate_g[j] = gg;
            sc.gate_o[j] = go;
            sc.cell[j] = cc;
            sc.cell_tanh[j] = ct;
            sc.hidden_out[j] = go * ct;
        }
        h = sc.hidden_out;
        c = sc.cell;
        if (caches) caches->push_back(std::move(sc));
    }

    double y = m.bias_head;
    for (int j = 0; j < H; ++j) y += m.w_head[j] * h[j];
    return y;
}

} // namespace

double lstm_window_loss(const ForecastModel& m, const std::vector<double>& window_inputs,
                        double target_std_value, std::vector<double>* grads) {
    const int H = m.hidden;
    const int D = ForecastModel::input_dim;
    std::vector<StepCache> caches;
    const double y = lstm_forward(m, window_inputs, grads ? &caches : nullptr);
    const double err = y - target_std_value;
    const double loss = err * err;
    if (!grads) return loss;

    if (grads->size() != m.parameter_count()) grads->assign(m.parameter_count(), 0.0);

    const size_t off_wi = 0;
    const size_t off_wr = off_wi + m.w_input.size();
    const size_t off_b = off_wr + m.w_recur.size();
    const size_t off_wh = off_b + m.bias.size();
    const size_t off_bh = off_wh + m.w_head.size();

    const int T = static_cast<int>(caches.size());
    const double dy = 2.0 * err;
    std::vector<double> dh(H, 0.0), dc(H, 0.0);
    for (int j = 0; j < H; ++j) {
        (*grads)[off_wh + j] += dy * caches[T - 1].hidden_out[j];
        dh[j] = dy * m.w_head[j];
    }
    (*grads)[off_bh] += dy;

    std::vector<double> dzi(H), dzf(H), dzg(H), dzo(H), dh_prev(H);
    for (int t = T - 1; t >= 0; --t) {
        const StepCache& sc = caches[t];
        for (int j = 0; j < H; ++j) {
            const double go = sc.gate_o[j], gi = sc.gate_i[j], gf = sc.gate_f[j], gg = sc.gate_g[j];
            const double ct = sc.cell_tanh[j];
            const double d_out = dh[j] * ct;
            dzo[j] = d_out * go * (1 - go);
            const double dcell = dc[j] + dh[j] * go * (1 - ct * ct);
            const double d_in = dcell * gg;
            dzi[j] = d_in * gi * (1 - gi);
            const double d_forget = dcell * sc.cell_prev[j];
            dzf[j] = d_forget * gf * (1 - gf);
            const double d_cand = dcell * gi;
            dzg[j] = d_cand * (1 - gg * gg);
            dc[j] = dcell * gf;
        }
        std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
        for (int j = 0; j < H; ++j) {
            const double dz[4] = {dzi[j], dzf[j], dzg[j], dzo[j]};
            for (int g = 0; g < 4; ++g) {
                const int row = g * H + j;
                (*grads)[off_b + row] += dz[g];
                for (int d = 0; d < D; ++d) (*grads)[off_wi + row * D + d] += dz[g] * sc.x[d];
                for (int k = 0; k < H; ++k) {
                    (*grads)[off_wr + row * H + k] += dz[g] * sc.hidden_prev[k];
                    dh_prev[k] += m.w_recur[row * H + k] * dz[g];
                }
            }
        }
        dh = dh_prev;
    }
    return loss;
}

double forecast_next(const ForecastModel& model, const std::vector<IntervalLoad>& history) {
    if (static_cast<int>(history.size()) < model.lookback)
        throw ConfigError("forecast_next: history shorter than the model lookback (" +
                          std::to_string(history.size()) + " < " + std::to_string(model.lookback) +
                          ")");
    if (model.kind == ForecastKind::Naive)
        return std::max(0.0, history.back().total());

    std::vector<double> window;
    window.reserve(model.lookback * ForecastModel::input_dim);
    for (size_t i = history.size() - model.lookback; i < history.size(); ++i) {
        window.push_back((history[i].context_tokens - model.in_mean[0]) / model.in_std[0]);
        window.push_back((history[i].generated_tokens - model.in_mean[1]) / model.in_std[1]);
    }
    const double y = lstm_forward(model, window, nullptr);
    return std::max(0.0, y * model.target_std + model.target_mean);
}

ForecastModel train_forecaster(const std::vector<IntervalLoad>& series, const TrainOptions& opt) {
    if (opt.lookback < 1) throw ConfigError("train_forecaster: lookback must be >= 1");
    if (opt.hidden < 1) throw ConfigError("train_forecaster: hidden size must be >= 1");
    if (static_cast<int>(series.size()) <= opt.lookback + 1)
        throw ConfigError("train_forecaster: series must be longer than lookback + 1");

    ForecastModel m;
    m.kind = ForecastKind::Lstm;
    m.lookback = opt.lookback;
    m.hidden = opt.hidden;

    const int H = opt.hidden;
    const int D = ForecastModel::input_dim;

    // standardization statistics over the whole series
    double mean[2] = {0, 0}, var[2] = {0, 0}, tmean = 0, tvar = 0;
    for (const auto& iv : series) {
        mean[0] += iv.context_tokens;
        mean[1] += iv.generated_tokens;
        tmean += iv.total();
    }
    const double n = static_cast<double>(series.size());
    mean[0] /= n;
    mean[1] /= n;
    tmean /= n;
    for (const auto& iv : series) {
        var[0] += (iv.context_tokens - mean[0]) * (iv.context_tokens - mean[0]);
        var[1] += (iv.generated_tokens - mean[1]) * (iv.generated_tokens - mean[1]);
        tvar += (iv.total() - tmean) * (iv.total() - tmean);
    }
    for (int d = 0; d < 2; ++d) {
        m.in_mean[d] = mean[d];
        m.in_std[d] = std::max(std::sqrt(var[d] / n), 1e-9);
    }
    m.target_mean = tmean;
    m.target_std = std::max(std::sqrt(tvar / n), 1e-9);

    // deterministic initialization
    std::mt19937_64 rng(opt.seed);
    const double r = 1.0 / std::sqrt(static_cast<double>(H));
    std::uniform_real_distribution<double> init(-r, r);
    m.w_input.resize(4 * H * D);
    m.w_recur.resize(4 * H * H);
    m.bias.assign(4 * H, 0.0);
    m.w_head.resize(H);
    for (auto& v : m.w_input) v = init(rng);
    for (auto& v : m.w_recur) v = init(rng);
    for (auto& v : m.w_head) v = init(rng);
    // forget-gate bias starts positive so early training keeps memory
    for (int j = 0; j < H; ++j) m.bias[H + j] = 1.0;
    m.bias_head = 0.0;

    // training windows: inputs [t-lookback+1 .. t] -> target total at t+1
    struct Sample {
        std::vector<double> inputs;
        double target;
    };
    std::vector<Sample> samples;
    for (size_t t = opt.lookback - 1; t + 1 < series.size(); ++t) {
        Sample s;
        s.inputs.reserve(opt.lookback * D);
        for (size_t i = t + 1 - opt.lookback; i <= t; ++i) {
            s.inputs.push_back((series[i].context_tokens - m.in_mean[0]) / m.in_std[0]);
            s.inputs.push_back((series[i].generated_tokens - m.in_mean[1]) / m.in_std[1]);
        }
        s.target = (series[t + 1].total() - m.target_mean) / m.target_std;
        samples.push_back(std::move(s));
    }
    const size_t n_val = static_cast<size_t>(std::floor(samples.size() * opt.validation_fraction));
    const size_t n_train = samples.size() - n_val;
    if (n_train == 0) throw ConfigError("train_forecaster: no training samples after split");

    std::vector<double> params = pack_parameters(m);
    std::vector<double> grads(params.size());
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        std::fill(grads.begin(), grads.end(), 0.0);
        double train_loss = 0;
        for (size_t s = 0; s < n_train; ++s)
            train_loss += lstm_window_loss(m, samples[s].inputs, samples[s].target, &grads);
        train_loss /= static_cast<double>(n_train);
        if (!std::isfinite(train_loss))
            throw TrainingError("train_forecaster: loss diverged at epoch " + std::to_string(epoch) +
                                "; try a smaller learning rate");

        double gnorm = 0;
        for (double& g : grads) {
            g /= static_cast<double>(n_train);
            gnorm += g * g;
        }
        gnorm = std::sqrt(gnorm);
        double scale = opt.learning_rate;
        if (opt.grad_clip > 0 && gnorm > opt.grad_clip) scale *= opt.grad_clip / gnorm;
        for (size_t i = 0; i < params.size(); ++i) params[i] -= scale * grads[i];
        unpack_parameters(m, params);

        double val_loss = 0;
        for (size_t s = n_train; s < samples.size(); ++s)
            val_loss += lstm_window_loss(m, samples[s].inputs, samples[s].target, nullptr);
        val_loss = n_val ? val_loss / static_cast<double>(n_val) : 0.0;
        m.train_loss.push_back(train_loss);
        m.validation_loss.push_back(val_loss);
    }
    return m;
}

void save_forecast_model(const ForecastModel& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write forecast model file: " + path);
    out << "rackctl-forecast 1\n";
    out << (m.kind == ForecastKind::Naive ? "naive" : "lstm") << "\n";
    out << m.lookback << " " << m.hidden << " " << ForecastModel::input_dim << "\n";
    char buf[40];
    const double stats[6] = {m.in_mean[0], m.in_mean[1], m.in_std[0],
                             m.in_std[1],  m.target_mean, m.target_std};
    for (int i = 0; i < 6; ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g%c", stats[i], i == 5 ? '\n' : ' ');
        out << buf;
    }
    for (double v : pack_parameters(m)) {
        std::snprintf(buf, sizeof(buf), "%.17g\n", v);
        out << buf;
    }
}

ForecastModel load_forecast_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open forecast model file: " + path);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "rackctl-forecast" || version != 1)
        throw ParseError(path + ": not a forecast model file (bad header)");
    std::string kind;
    in >> kind;
    ForecastModel m;
    if (kind == "naive")
        m.kind = ForecastKind::Naive;
    else if (kind == "lstm")
        m.kind = ForecastKind::Lstm;
    else
        throw ParseError(path + ": unknown model kind '" + kind + "'");
    int input_dim = 0;
    in >> m.lookback >> m.hidden >> input_dim;
    if (input_dim != ForecastModel::input_dim)
        throw ParseError(path + ": unsupported input dimension");
    in >> m.in_mean[0] >> m.in_mean[1] >> m.in_std[0] >> m.in_std[1] >> m.target_mean >>
        m.target_std;
    const int H = m.hidden;
    m.w_input.resize(4 * H * ForecastModel::input_dim);
    m.w_recur.resize(4 * H * H);
    m.bias.resize(4 * H);
    m.w_head.resize(H);
    std::vector<double> params(m.parameter_count());
    for (auto& v : params)
        if (!(in >> v)) throw ParseError(path + ": truncated parameter block");
    unpack_parameters(m, params);
    return m;
}

} // namespace rackctl
