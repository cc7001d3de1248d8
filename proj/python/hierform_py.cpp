// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "hierform/analysis.hpp"
#include "hierform/cli.hpp"
#include "hierform/config.hpp"
#include "hierform/io.hpp"
#include "hierform/training.hpp"

namespace py = pybind11;
using namespace hierform;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.values().begin());
  return m;
}

Array to_array(const Matrix& m) {
  Array a({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), a.mutable_data());
  return a;
}

RunConfig make_config(const std::string& preset, const std::vector<std::string>& overrides) {
  RunConfig base;
  if (preset == "tiny") {
    base = tiny_preset();
  } else if (preset != "default") {
    throw py::value_error("preset must be 'default' or 'tiny'");
  }
  return load_config(std::nullopt, overrides, base);
}

py::dict plan_dict(const StagePlan& p) {
  py::dict d;
  d["hop_ms"] = p.hop_ms;
  d["token_span_ms"] = p.token_span_ms;
  d["window"] = p.window;
  d["merge"] = p.merge;
  d["length"] = p.length;
  d["word_tokens"] = p.word_tokens;
  d["layers"] = p.layers;
  return d;
}

ModelKind parse_kind(const std::string& kind) {
  if (kind == "hierarchical") return ModelKind::hierarchical;
  if (kind == "baseline") return ModelKind::baseline;
  throw py::value_error("kind must be 'hierarchical' or 'baseline'");
}

class Model {
 public:
  Model(const std::string& kind, std::size_t frames, std::size_t input_width, const std::string& preset,
        const std::vector<std::string>& overrides)
      : config_(make_config(preset, overrides)),
        plan_(derive_stage_plan(config_.durations, config_.hop_ms, frames, plan_overrides(config_))) {
    const ModelDims dims = model_dims(config_, input_width == 0 ? config_.d : input_width);
    params_ = parse_kind(kind) == ModelKind::hierarchical
                  ? init_hierarchical(dims, plan_, config_.seed)
                  : init_baseline(dims, plan_.total_layers(), config_.seed);
  }

  py::dict predict(const Array& features, const std::optional<std::vector<bool>>& valid, bool record) const {
    ForwardOptions options;
    options.ablations = config_.ablations;
    options.record_attention = record;
    const Prediction p = hierform::predict(params_, &plan_, to_matrix(features), valid.value_or(std::vector<bool>{}),
                                           options);
    py::dict out;
    out["logits"] = py::array_t<double>(static_cast<py::ssize_t>(p.logits.size()), p.logits.data());
    out["label"] = p.label;
    if (record) out["profile"] = attention_weight_profile(p.records);
    return out;
  }

  py::dict param_count() const {
    const ParamCount c = count_params(params_);
    py::dict d;
    d["total"] = c.total;
    d["word_tokens"] = c.word_tokens;
    d["structural"] = c.structural();
    return d;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < params_.store.size(); ++i) out.push_back(params_.store.name(params_.store.id(i)));
    return out;
  }

  Array get(const std::string& name) const { return to_array(params_.store.value(params_.store.find(name))); }
  void set(const std::string& name, const Array& value) {
    Matrix& target = params_.store.value(params_.store.find(name));
    Matrix m = to_matrix(value);
    if (m.rows() != target.rows() || m.cols() != target.cols()) throw py::value_error("shape mismatch for " + name);
    target = std::move(m);
  }

  void save(const std::filesystem::path& path) const { save_weights(path, params_.store); }
  void load(const std::filesystem::path& path) { load_weights(path, params_.store); }
  py::dict plan() const { return plan_dict(plan_); }

 private:
  RunConfig config_;
  StagePlan plan_;
  ModelParams params_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hierarchical speech transformer: planning, cost analysis, inference and metrics";

  py::register_exception<Error>(m, "HierformError", PyExc_ValueError);

  m.def(
      "plan",
      [](std::size_t frames, double hop_ms, double mismatch, const std::vector<std::string>& overrides) {
        RunConfig c = load_config(std::nullopt, overrides);
        c.durations.mismatch = mismatch;
        return plan_dict(derive_stage_plan(c.durations, hop_ms, frames, plan_overrides(c)));
      },
      py::arg("frames"), py::arg("hop_ms") = 20.0, py::arg("mismatch") = 1.0,
      py::arg("overrides") = std::vector<std::string>{});

  m.def("msa_flops", &msa_flops, py::arg("length"), py::arg("d"));
  m.def("smsa_flops", &smsa_flops, py::arg("length"), py::arg("word_tokens"), py::arg("window"), py::arg("d"));

  m.def(
      "flops",
      [](std::size_t frames, double hop_ms, const std::vector<std::string>& overrides) {
        const RunConfig c = load_config(std::nullopt, overrides);
        const StagePlan plan = derive_stage_plan(c.durations, hop_ms, frames, plan_overrides(c));
        const ModelDims dims = model_dims(c, c.d);
        const CostReport base = model_flops(plan, ModelKind::baseline, dims);
        const CostReport sf = model_flops(plan, ModelKind::hierarchical, dims, c.ablations);
        const CostComparison cmp = compare_costs(base, sf);
        py::dict d;
        d["baseline"] = base.compute_total();
        d["hierarchical"] = sf.compute_total();
        d["merge"] = sf.merge_total;
        d["baseline_params"] = base.params_total;
        d["hierarchical_params"] = sf.params_total;
        d["gain_percent"] = cmp.compute_gain_percent;
        d["params_percent"] = cmp.params_gain_percent;
        return d;
      },
      py::arg("frames"), py::arg("hop_ms") = 20.0, py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "metrics",
      [](const std::vector<std::vector<std::size_t>>& confusion) {
        const Metrics r = metrics(Confusion::from_rows(confusion));
        py::dict d;
        d["WA"] = r.wa;
        d["UA"] = r.ua;
        d["WF1"] = r.wf1;
        d["MF1"] = r.mf1;
        d["empty_classes"] = r.empty_classes;
        return d;
      },
      py::arg("confusion"));

  m.def("majority_vote", [](const std::vector<std::size_t>& p) { return majority_vote(p); }, py::arg("predictions"));
  m.def("cosine_lr", &cosine_lr, py::arg("epoch"), py::arg("total"), py::arg("lr0"));
  m.def(
      "cce", [](const Array& probs, const Array& one_hot) { return cce_loss(to_matrix(probs), to_matrix(one_hot)); },
      py::arg("probs"), py::arg("one_hot"));

  m.def(
      "load_features",
      [](const std::filesystem::path& path) {
        const FeatureSequence s = load_features(path);
        return py::make_tuple(to_array(s.values), s.hop_ms, s.label);
      },
      py::arg("path"));
  m.def(
      "save_features",
      [](const std::filesystem::path& path, const Array& values, double hop_ms,
         std::optional<std::uint32_t> label) {
        FeatureSequence s;
        s.values = to_matrix(values);
        s.hop_ms = hop_ms;
        s.label = label;
        save_features(path, s);
      },
      py::arg("path"), py::arg("values"), py::arg("hop_ms") = 20.0, py::arg("label") = std::nullopt);

  m.def(
      "gradcheck",
      [](const std::string& preset, const std::vector<std::string>& overrides, double fraction) {
        const RunConfig c = make_config(preset, overrides);
        const StagePlan plan = derive_stage_plan(c.durations, c.hop_ms, c.max_len, plan_overrides(c));
        const Matrix features = uniform_matrix(c.max_len, c.d, 1.0, c.seed, "gradcheck.features");
        const Matrix target = one_hot(std::vector<std::size_t>{0}, c.classes);
        py::list rows;
        for (int combo = 7; combo >= 0; --combo) {
          ModelParams model = init_hierarchical(model_dims(c, c.d), plan, c.seed);
          ForwardOptions options;
          options.ablations = {(combo & 4) != 0, (combo & 2) != 0, (combo & 1) != 0};
          const LossFn loss = [&](ParamBinding& p) {
            return cce_loss(masked_softmax(hierarchical_forward(p, features, {}, model, plan, options).logits),
                            target);
          };
          GradCheckOptions g;
          g.sample_fraction = fraction;
          g.seed = c.seed;
          const GradCheckResult r = grad_check(model.store, loss, g);
          py::dict d;
          d["unit_encoder"] = options.ablations.unit_encoder;
          d["word_encoder"] = options.ablations.word_encoder;
          d["merging"] = options.ablations.merging;
          d["max_rel_error"] = r.max_rel_error;
          d["checked"] = r.checked;
          d["passed"] = r.passed;
          rows.append(d);
        }
        return rows;
      },
      py::arg("preset") = "tiny", py::arg("overrides") = std::vector<std::string>{}, py::arg("fraction") = 0.05);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&, std::size_t, std::size_t, const std::string&,
                    const std::vector<std::string>&>(),
           py::arg("kind") = "hierarchical", py::arg("frames") = 12, py::arg("input_width") = 0,
           py::arg("preset") = "tiny", py::arg("overrides") = std::vector<std::string>{})
      .def("predict", &Model::predict, py::arg("features"), py::arg("valid") = std::nullopt,
           py::arg("record_attention") = false)
      .def("param_count", &Model::param_count)
      .def("parameter_names", &Model::names)
      .def("get", &Model::get, py::arg("name"))
      .def("set", &Model::set, py::arg("name"), py::arg("value"))
      .def("save", &Model::save, py::arg("path"))
      .def("load", &Model::load, py::arg("path"))
      .def_property_readonly("plan", &Model::plan);
}
