#include "neuralscale/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "neuralscale/errors.hpp"

namespace neuralscale {

void TrainSchedule::validate() const {
    require(std::isfinite(learning_rate) && learning_rate >= 0.0, ErrorKind::Domain, "learning_rate must be >= 0");
    require(momentum >= 0.0 && momentum < 1.0, ErrorKind::Domain, "momentum must be in [0, 1)");
    require(weight_decay >= 0.0, ErrorKind::Domain, "weight_decay must be >= 0");
    require(epochs >= 0, ErrorKind::Domain, "epochs must be >= 0");
    require(batch_size >= 1, ErrorKind::Domain, "batch_size must be >= 1");
    require(lr_decay > 0.0, ErrorKind::Domain, "lr_decay must be positive");
}

double TrainSchedule::rate_at(int epoch) const {
    double lr = learning_rate;
    for (int m : lr_milestones)
        if (epoch >= m) lr *= lr_decay;
    return lr;
}

BatchStream::BatchStream(const Split& split, InputShape shape, int batch_size, std::uint64_t seed)
    : split_(&split), shape_(shape), batch_size_(batch_size), rng_(seed), order_(split.size()) {
    require(!split.empty(), ErrorKind::Domain, "cannot stream batches from an empty split");
    require(batch_size >= 1, ErrorKind::Domain, "batch_size must be >= 1");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
}

void BatchStream::reshuffle() { rng_.shuffle(std::span<std::size_t>(order_)); }

std::size_t BatchStream::batches_per_epoch() const {
    return (order_.size() + batch_size_ - 1) / batch_size_;
}

Batch BatchStream::next() {
    if (cursor_ >= order_.size()) {
        cursor_ = 0;
        ++epoch_;
        reshuffle();
    }
    const std::size_t count = std::min<std::size_t>(batch_size_, order_.size() - cursor_);
    const std::size_t sample = static_cast<std::size_t>(shape_.channels) * shape_.height * shape_.width;
    Batch b;
    b.x = Tensor(static_cast<int>(count), shape_.channels, shape_.height, shape_.width);
    b.y.resize(count);
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t idx = order_[cursor_ + k];
        std::copy_n(split_->features.begin() + static_cast<std::ptrdiff_t>(idx * sample), sample,
                    b.x.data.begin() + static_cast<std::ptrdiff_t>(k * sample));
        b.y[k] = split_->labels[idx];
    }
    cursor_ += count;
    return b;
}

Batch make_batch(const Split& split, InputShape shape, std::size_t first, std::size_t count) {
    const std::size_t sample = static_cast<std::size_t>(shape.channels) * shape.height * shape.width;
    Batch b;
    b.x = Tensor(static_cast<int>(count), shape.channels, shape.height, shape.width);
    std::copy_n(split.features.begin() + static_cast<std::ptrdiff_t>(first * sample), count * sample, b.x.data.begin());
    b.y.assign(split.labels.begin() + static_cast<std::ptrdiff_t>(first),
               split.labels.begin() + static_cast<std::ptrdiff_t>(first + count));
    return b;
}

double compute_gradients(Network& net, const Batch& batch, ForwardCache& cache, long long step) {
    net.zero_grad();
    const double loss = backward(net, batch.x, batch.y, cache);
    if (!std::isfinite(loss))
        throw TrainingDivergence(step, "non-finite training loss at step " + std::to_string(step));
    return loss;
}

void apply_update(Network& net, const ForwardCache& cache, const SgdSettings& sgd) {
    update_running_stats(net, cache);
    sgd_step(net, sgd);
}

TrainResult train(Network& net, const Dataset& data, const TrainSchedule& sched) {
    sched.validate();
    require(!data.train.empty(), ErrorKind::Domain, "training split is empty");
    TrainResult result;
    if (sched.epochs == 0) return result;
    validate_dataset(data);

    BatchStream stream(data.train, data.shape, sched.batch_size, sched.seed);
    ForwardCache cache;
    long long step = 0;
    for (int epoch = 0; epoch < sched.epochs; ++epoch) {
        const SgdSettings sgd{sched.rate_at(epoch), sched.momentum, sched.weight_decay, false};
        double total = 0.0;
        std::size_t seen = 0;
        for (std::size_t b = 0; b < stream.batches_per_epoch(); ++b, ++step) {
            const Batch batch = stream.next();
            const double loss = compute_gradients(net, batch, cache, step);
            apply_update(net, cache, sgd);
            total += loss * static_cast<double>(batch.y.size());
            seen += batch.y.size();
        }
        result.loss_history.push_back(total / static_cast<double>(seen));
        if (sched.track_validation) result.validation_accuracy.push_back(evaluate(net, data).accuracy);
    }
    return result;
}

Evaluation evaluate(const Network& net, const Split& split, InputShape shape) {
    require(!split.empty(), ErrorKind::Domain, "cannot evaluate on an empty split");
    constexpr std::size_t kChunk = 256;
    std::size_t correct = 0;
    double loss = 0.0;
    for (std::size_t first = 0; first < split.size(); first += kChunk) {
        const std::size_t count = std::min(kChunk, split.size() - first);
        const Batch b = make_batch(split, shape, first, count);
        const Tensor logits = forward(net, b.x, Mode::Eval);
        const auto pred = argmax_rows(logits);
        for (std::size_t k = 0; k < count; ++k)
            if (pred[k] == b.y[k]) ++correct;
        loss += cross_entropy(logits, b.y) * static_cast<double>(count);
    }
    const double n = static_cast<double>(split.size());
    return {static_cast<double>(correct) / n, loss / n};
}

}  // namespace neuralscale
