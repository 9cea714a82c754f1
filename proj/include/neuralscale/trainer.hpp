#pragma once

#include <cstdint>
#include <vector>

#include "neuralscale/dataset.hpp"
#include "neuralscale/network.hpp"
#include "neuralscale/rng.hpp"

namespace neuralscale {

struct TrainSchedule {
    double learning_rate = 0.1;
    double momentum = 0.5;
    double weight_decay = 5e-4;
    int epochs = 10;
    std::vector<int> lr_milestones;  // epochs at which the rate is multiplied by lr_decay
    double lr_decay = 0.1;
    int batch_size = 64;
    std::uint64_t seed = 1;
    bool track_validation = false;  // evaluate on the validation split after every epoch

    void validate() const;
    double rate_at(int epoch) const;
};

struct TrainResult {
    std::vector<double> loss_history;         // mean train loss per epoch
    std::vector<double> validation_accuracy;  // per epoch when tracked
};

struct Batch {
    Tensor x;
    std::vector<int> y;
};

// Endless shuffled mini-batch stream over one split; reshuffles every epoch.
class BatchStream {
public:
    BatchStream(const Split& split, InputShape shape, int batch_size, std::uint64_t seed);

    Batch next();
    int epoch() const { return epoch_; }
    std::size_t batches_per_epoch() const;

private:
    void reshuffle();

    const Split* split_;
    InputShape shape_;
    int batch_size_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    int epoch_ = 0;
};

Batch make_batch(const Split& split, InputShape shape, std::size_t first, std::size_t count);

// zero_grad + train-mode backward. Throws TrainingDivergence on a non-finite loss.
double compute_gradients(Network& net, const Batch& batch, ForwardCache& cache, long long step);

// Running statistics + SGD update from the gradients left by compute_gradients.
void apply_update(Network& net, const ForwardCache& cache, const SgdSettings& sgd);

TrainResult train(Network& net, const Dataset& data, const TrainSchedule& sched);

struct Evaluation {
    double accuracy = 0.0;
    double loss = 0.0;
};

Evaluation evaluate(const Network& net, const Split& split, InputShape shape);
inline Evaluation evaluate(const Network& net, const Dataset& data) {
    return evaluate(net, data.validation, data.shape);
}

}  // namespace neuralscale
