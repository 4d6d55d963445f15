#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rackctl/workload.hpp"

namespace rackctl {

enum class ForecastKind { Naive, Lstm };

struct TrainOptions {
    int lookback = 16;
    int hidden = 24;
    int epochs = 200;
    double learning_rate = 0.05;
    double grad_clip = 5.0;       // global-norm clip; <= 0 disables
    double validation_fraction = 0.2;
    uint64_t seed = 1;
};

// Single-layer LSTM over the 2-channel interval series plus an affine head.
// Inputs and target are standardized with statistics stored in the model so
// that inference is self-contained.
struct ForecastModel {
    ForecastKind kind = ForecastKind::Naive;
    int lookback = 1;
    int hidden = 0;
    static constexpr int input_dim = 2;

    // standardization statistics
    double in_mean[2] = {0, 0};
    double in_std[2] = {1, 1};
    double target_mean = 0;
    double target_std = 1;

    // parameters, gate order [input, forget, cell, output]
    std::vector<double> w_input;  // (4*hidden) x input_dim, row-major
    std::vector<double> w_recur;  // (4*hidden) x hidden
    std::vector<double> bias;     // 4*hidden
    std::vector<double> w_head;   // hidden
    double bias_head = 0;

    std::vector<double> train_loss;      // per epoch, standardized MSE
    std::vector<double> validation_loss; // per epoch

    std::size_t parameter_count() const;

    static ForecastModel naive(int lookback = 1);
};

// Predicted total tokens (context + generated) for the next interval.
// Naive returns the previous interval's total. Never negative.
double forecast_next(const ForecastModel& model, const std::vector<IntervalLoad>& history);

ForecastModel train_forecaster(const std::vector<IntervalLoad>& series, const TrainOptions& opt);

// Flat numeric serialization with an embedded header.
void save_forecast_model(const ForecastModel& model, const std::string& path);
ForecastModel load_forecast_model(const std::string& path);

// --- internals exposed for testing --------------------------------------

// Squared-error loss and analytic parameter gradient for one window.
// Gradients are accumulated into grads (same layout as pack_parameters).
double lstm_window_loss(const ForecastModel& model, const std::vector<double>& window_inputs,
                        double target_std_value, std::vector<double>* grads);

std::vector<double> pack_parameters(const ForecastModel& model);
void unpack_parameters(ForecastModel& model, const std::vector<double>& params);

} // namespace rackctl
