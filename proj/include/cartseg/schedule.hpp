#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "cartseg/common.hpp"

namespace cartseg {

struct PlateauConfig {
    int start_epoch = 50; // observations before this epoch never count toward patience
    double factor = 0.1;
    int patience = 10;
    double min_lr = 0.0;

    void validate() const
    {
        if (!(factor > 0.0 && factor < 1.0))
            throw ConfigError("plateau: factor must lie in (0, 1)");
        if (patience < 1)
            throw ConfigError("plateau: patience must be >= 1");
        if (start_epoch < 1)
            throw ConfigError("plateau: start_epoch must be >= 1");
        if (min_lr < 0.0)
            throw ConfigError("plateau: min_lr must be >= 0");
    }
};

// Reduce-on-plateau over a maximized metric. Epochs are 1-based. The best
// value is tracked from epoch 1, but non-improving epochs only count toward
// patience from start_epoch on; a reduction takes effect for the next epoch.
// Pure over the observed metric sequence, so it is testable without training.
class PlateauScheduler {
public:
    PlateauScheduler(double initial_lr, const PlateauConfig& cfg)
        : lr_(initial_lr)
        , cfg_(cfg)
    {
        cfg.validate();
    }

    // call once at the end of each epoch; returns the lr for the next epoch
    double observe(int epoch, double metric)
    {
        const bool improved = metric > best_;
        if (improved)
            best_ = metric;
        if (epoch >= cfg_.start_epoch) {
            if (improved)
                bad_ = 0;
            else
                ++bad_;
            if (bad_ >= cfg_.patience) {
                lr_ = std::max(cfg_.min_lr, lr_ * cfg_.factor);
                bad_ = 0;
            }
        }
        return lr_;
    }

    double lr() const { return lr_; }

private:
    double lr_;
    PlateauConfig cfg_;
    double best_ = -std::numeric_limits<double>::infinity();
    int bad_ = 0;
};

struct EarlyStopConfig {
    int patience = 15;
    double min_delta = 0.001; // improvement must reach best + min_delta

    void validate() const
    {
        if (patience < 1)
            throw ConfigError("early_stop: patience must be >= 1");
        if (min_delta < 0.0)
            throw ConfigError("early_stop: min_delta must be >= 0");
    }
};

// Stops after `patience` consecutive epochs without an improvement of at
// least min_delta over the best seen metric. The first observation sets the
// baseline, so a flat sequence stops at epoch 1 + patience.
class EarlyStopper {
public:
    explicit EarlyStopper(const EarlyStopConfig& cfg)
        : cfg_(cfg)
    {
        cfg.validate();
    }

    // returns true when training should stop after this epoch
    bool observe(double metric)
    {
        if (first_) {
            best_ = metric;
            first_ = false;
            return false;
        }
        if (metric >= best_ + cfg_.min_delta) {
            best_ = metric;
            bad_ = 0;
            return false;
        }
        ++bad_;
        return bad_ >= cfg_.patience;
    }

private:
    EarlyStopConfig cfg_;
    bool first_ = true;
    double best_ = 0.0;
    int bad_ = 0;
};

} // namespace cartseg
