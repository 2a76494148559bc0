#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mha/experiments.hpp"

namespace py = pybind11;
using namespace mha;

namespace {

Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw DimError("2-D array expected");
  Matrix m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.a.begin());
  return m;
}

py::array_t<double> from_matrix(const Matrix& m) {
  py::array_t<double> a({m.rows, m.cols});
  std::copy(m.a.begin(), m.a.end(), a.mutable_data());
  return a;
}

using PyHeads = std::vector<std::pair<py::array_t<double>, py::array_t<double>>>;

ModelParams to_model(const PyHeads& heads) {
  ModelParams th;
  for (const auto& [U, W] : heads) th.heads.push_back({to_matrix(U), to_matrix(W)});
  th.check_consistent();
  return th;
}

Dataset to_dataset(const std::vector<py::array_t<double>>& Xs, const std::vector<int>& ys) {
  if (Xs.size() != ys.size()) throw DimError("len(Xs) != len(ys)");
  std::vector<LabeledExample> ex;
  for (size_t i = 0; i < Xs.size(); ++i)
    ex.push_back({TokenMatrix(to_matrix(Xs[i])), ys[i]});
  return Dataset::from(std::move(ex));
}

}  // namespace

PYBIND11_MODULE(_mha, m) {
  m.doc() = "multi-head softmax attention: forward, gradients, risk, training";

  m.def(
      "forward",
      [](const py::array_t<double>& X, const PyHeads& heads) {
        return forward_multi(TokenMatrix(to_matrix(X)), to_model(heads));
      },
      py::arg("X"), py::arg("heads"),
      "Phi~(X) = (1/sqrt(H)) sum_h <U_h, softmax(X W_h X^T) X>");

  m.def(
      "grad",
      [](const py::array_t<double>& X, const PyHeads& heads) {
        ModelParams th = to_model(heads);
        std::vector<HeadGradient> g = grad_multi(TokenMatrix(to_matrix(X)), th);
        std::vector<std::pair<py::array_t<double>, py::array_t<double>>> out;
        for (const auto& hg : g) out.emplace_back(from_matrix(hg.dU), from_matrix(hg.dW));
        return out;
      },
      py::arg("X"), py::arg("heads"), "per-head (dU, dW) of Phi~");

  m.def(
      "empirical_risk",
      [](const std::vector<py::array_t<double>>& Xs, const std::vector<int>& ys,
         const PyHeads& heads) {
        return empirical_risk(to_dataset(Xs, ys), to_model(heads));
      },
      py::arg("Xs"), py::arg("ys"), py::arg("heads"));

  m.def(
      "risk_gradient",
      [](const std::vector<py::array_t<double>>& Xs, const std::vector<int>& ys,
         const PyHeads& heads) {
        ModelParams g = risk_gradient(to_dataset(Xs, ys), to_model(heads));
        std::vector<std::pair<py::array_t<double>, py::array_t<double>>> out;
        for (const auto& h : g.heads) out.emplace_back(from_matrix(h.U), from_matrix(h.W));
        return out;
      },
      py::arg("Xs"), py::arg("ys"), py::arg("heads"));

  m.def(
      "dm1_sample",
      [](int n, int d, int T, int M, double S, double zeta, double sigma, std::uint64_t seed) {
        MixtureSpec spec;
        spec.d = d;
        spec.T = T;
        spec.M = M;
        spec.S = S;
        spec.zeta = zeta;
        spec.sigma = sigma;
        spec.seed = seed;
        Dm1Result r = dm1_sample(spec, n);
        std::vector<py::array_t<double>> Xs;
        std::vector<int> ys;
        for (const auto& e : r.data.examples) {
          Xs.push_back(from_matrix(e.x.X));
          ys.push_back(e.y);
        }
        return py::make_tuple(Xs, ys, r.bounds.R);
      },
      py::arg("n"), py::arg("d") = 4, py::arg("T") = 10, py::arg("M") = 2, py::arg("S") = 2.0,
      py::arg("zeta") = 0.1, py::arg("sigma") = 0.1, py::arg("seed") = 0,
      "tokenized-mixture sample; returns (Xs, ys, R)");

  m.def(
      "train_gd",
      [](const std::vector<py::array_t<double>>& Xs, const std::vector<int>& ys, int H,
         double eta, int K) {
        Dataset data = to_dataset(Xs, ys);
        TrainConfig cfg;
        cfg.eta = eta;
        cfg.K = K;
        GroupedParams g0 = grouped_zeros(data.T, data.d, H);
        GroupedParams out;
        TrainTrace trace = train_grouped(data, g0, cfg, {}, &out);
        ModelParams th = model_from_grouped(out);
        PyHeads heads;
        for (const auto& h : th.heads) heads.emplace_back(from_matrix(h.U), from_matrix(h.W));
        std::vector<double> losses;
        for (const auto& r : trace.rows) losses.push_back(r.train_loss);
        return py::make_tuple(heads, losses);
      },
      py::arg("Xs"), py::arg("ys"), py::arg("H") = 1, py::arg("eta") = 1.0, py::arg("K") = 100,
      "full-batch GD from zero init; returns (heads, per-iteration losses)");

  py::register_exception<DimError>(m, "DimError");
  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<NumericError>(m, "NumericError");
}
