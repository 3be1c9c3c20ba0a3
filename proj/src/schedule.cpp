#include "schedule.hpp"

#include <cmath>
#include <string>

namespace df {

double ScheduleConfig::coeff_b() const {
    return (double)(R - 1) / std::pow((double)(N - 1), alpha);
}

void ScheduleConfig::validate() const {
    if (N < 2) throw std::invalid_argument("schedule: N must be >= 2");
    if (g < 1 || N % g != 0)
        throw std::invalid_argument("schedule: N must be divisible by g (N=" + std::to_string(N) +
                                    ", g=" + std::to_string(g) + ")");
    if (f < 1 || R < f || R % f != 0)
        throw std::invalid_argument("schedule: R must be a positive multiple of f");
    if (!(alpha > 0.0)) throw std::invalid_argument("schedule: alpha must be > 0");
}

double resolution_raw(const ScheduleConfig& cfg, int n) {
    if (n < 1 || n > cfg.N)
        throw std::out_of_range("resolution_raw: n=" + std::to_string(n) + " outside [1," +
                                std::to_string(cfg.N) + "]");
    return (double)cfg.R - cfg.coeff_b() * std::pow((double)(cfg.N - n), cfg.alpha);
}

int resolution_for_prefix(const ScheduleConfig& cfg, int n) {
    const double r = resolution_raw(cfg, n);
    // nearest multiple of f, ties up, never below f
    const int rounded = (int)std::floor(r / (double)cfg.f + 0.5) * cfg.f;
    return std::max(rounded, cfg.f);
}

int resolution_for_group_prefix(const ScheduleConfig& cfg, int k) {
    const int M = cfg.group_count();
    if (k < 1 || k > M)
        throw std::out_of_range("resolution_for_group_prefix: k=" + std::to_string(k) +
                                " outside [1," + std::to_string(M) + "]");
    return resolution_for_prefix(cfg, k * cfg.g);
}

int sample_training_prefix(const ScheduleConfig& cfg, double p_full, Rng& rng) {
    if (p_full < 0.0 || p_full > 1.0)
        throw std::invalid_argument("sample_training_prefix: p_full outside [0,1]");
    const int M = cfg.group_count();
    if (M < 2 && p_full < 1.0)
        throw std::invalid_argument("sample_training_prefix: M=1 leaves no partial prefix");
    if (rng.bernoulli(p_full)) return M;
    return 1 + (int)rng.uniform_int(M - 1);
}

int decode_step_count(const ScheduleConfig& cfg, int k_target) {
    const int M = cfg.group_count();
    if (k_target < 1 || k_target > M)
        throw std::out_of_range("decode_step_count: k_target outside [1," + std::to_string(M) + "]");
    return cfg.g + (k_target - 1);
}

std::pair<int, int> token_grid_shape(const ScheduleConfig& cfg, int resolution) {
    if (resolution < cfg.f || resolution % cfg.f != 0)
        throw std::invalid_argument("token_grid_shape: resolution " + std::to_string(resolution) +
                                    " is not a positive multiple of f=" + std::to_string(cfg.f));
    return {resolution / cfg.f, resolution / cfg.f};
}

}  // namespace df
