#pragma once

// Patience-based early stopping shared by the predictor and fuser trainers.
// Improvement is strict <; training stops once `patience` consecutive
// epochs fail to improve on the best validation loss.

#include <cstddef>
#include <limits>

namespace mosfuse {

class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

    // Returns true if this epoch improved on the best loss so far.
    bool observe(std::size_t epoch, double loss) {
        if (loss < best_loss_) {
            best_loss_ = loss;
            best_epoch_ = epoch;
            since_best_ = 0;
            return true;
        }
        ++since_best_;
        return false;
    }

    bool should_stop() const { return since_best_ >= patience_; }
    double best_loss() const { return best_loss_; }
    std::size_t best_epoch() const { return best_epoch_; }

private:
    std::size_t patience_;
    double best_loss_ = std::numeric_limits<double>::infinity();
    std::size_t best_epoch_ = 0;
    std::size_t since_best_ = 0;
};

}  // namespace mosfuse
