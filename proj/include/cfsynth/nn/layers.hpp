#pragma once

#include "cfsynth/nn/ops.hpp"
#include "cfsynth/nn/params.hpp"

#include <random>
#include <string>

// Parameterized building blocks registered in a ParamStore under
// "<name>.w", "<name>.b", and so on.
namespace cfs::nn {

struct Conv {
    Tensor w, b;
    int kernel = 3, stride = 1, pad = 1;
    Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, kernel, stride, pad); }
};

struct Linear {
    Tensor w, b;
    Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
};

struct Norm {
    Tensor gamma, beta;
    int groups = 0;  // 0 selects layer norm over channels
    Tensor operator()(const Tensor& x) const {
        return groups > 0 ? group_norm(x, groups, gamma, beta) : layer_norm(x, gamma, beta);
    }
};

enum class Init { he, xavier, zero };

Conv make_conv(ParamStore& store, std::mt19937_64& rng, const std::string& name, const std::string& group, int cin,
               int cout, int kernel = 3, int stride = 1, Init init = Init::he);
Linear make_linear(ParamStore& store, std::mt19937_64& rng, const std::string& name, const std::string& group,
                   int in, int out, bool bias = true, Init init = Init::xavier);
Norm make_norm(ParamStore& store, const std::string& name, const std::string& group, int channels, int groups = 0);

}  // namespace cfs::nn
