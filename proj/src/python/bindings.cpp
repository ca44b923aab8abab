// Copyright 2026 The gradleak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "gradleak/checkpoint.hpp"
#include "gradleak/data.hpp"
#include "gradleak/detection.hpp"
#include "gradleak/errors.hpp"
#include "gradleak/federation.hpp"
#include "gradleak/leakage.hpp"
#include "gradleak/metrics.hpp"
#include "gradleak/models.hpp"
#include "gradleak/pipeline.hpp"
#include "gradleak/reconstruction.hpp"

namespace py = pybind11;

namespace gradleak {
namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict scan_dict(const ScanResult& scan) {
  py::list reports;
  for (const auto& r : scan.reports) {
    py::dict d;
    d["layer"] = r.layer;
    d["index"] = r.index;
    d["size"] = r.size;
    d["entropy"] = r.entropy;
    d["flagged"] = r.flagged;
    reports.append(d);
  }
  py::dict out;
  out["anomalous"] = scan.anomalous;
  out["min_entropy"] = scan.min_entropy;
  out["percentile3"] = scan.percentile3;
  out["reports"] = reports;
  return out;
}

SpabHead make_head(const Array& w, const Array& b, const Array& w2, const Array& b2) {
  return SpabHead(to_tensor(w), to_tensor(b), to_tensor(w2), to_tensor(b2));
}

}  // namespace
}  // namespace gradleak

PYBIND11_MODULE(_core, m) {
  using namespace gradleak;
  m.doc() = "gradleak core bindings";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);

  m.def(
      "synth_dataset",
      [](std::uint64_t seed, std::size_t count, std::size_t classes, std::size_t size,
         const std::string& family, bool private_split) {
        const Dataset d = synth_dataset(seed, count, classes, size, parse_family(family),
                                        private_split ? Split::kPrivate : Split::kPublic);
        std::vector<std::size_t> all(d.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return py::make_tuple(to_array(d.stack(all)), d.labels);
      },
      py::arg("seed"), py::arg("count"), py::arg("classes") = 4, py::arg("size") = 16,
      py::arg("family") = "geometric", py::arg("private_split") = false,
      "Returns (images (N, 3, H, W), labels).");

  py::class_<Classifier>(m, "Classifier")
      .def_static(
          "load",
          [](const std::filesystem::path& p) { return classifier_from_checkpoint(read_checkpoint_file(p)); },
          py::arg("path"))
      .def("save",
           [](const Classifier& c, const std::filesystem::path& p) { write_checkpoint_file(p, to_checkpoint(c)); })
      .def_property_readonly("ir_dim", [](const Classifier& c) { return c.extractor.ir_dim(); })
      .def(
          "features", [](const Classifier& c, const Array& x) { return to_array(c.extractor.forward(to_tensor(x))); },
          py::arg("images"), "IRs (B, M) of a (B, C, H, W) batch.")
      .def("head", [](const Classifier& c) {
        return py::make_tuple(to_array(c.head.w), to_array(c.head.b), to_array(c.head.w2), to_array(c.head.b2));
      });

  m.def(
      "random_head",
      [](std::size_t ir_dim, std::size_t width, std::size_t classes, std::uint64_t seed) {
        const SpabHead h = SpabHead::random(ir_dim, width, classes, seed);
        return py::make_tuple(to_array(h.w), to_array(h.b), to_array(h.w2), to_array(h.b2));
      },
      py::arg("ir_dim"), py::arg("width"), py::arg("classes"), py::arg("seed"));

  m.def(
      "head_update",
      [](const Array& w, const Array& b, const Array& w2, const Array& b2, const Array& irs,
         const std::vector<int>& labels) {
        const ClientTrace t = trace_head_update(make_head(w, b, w2, b2), to_tensor(irs), labels);
        py::dict out;
        out["grad_w"] = to_array(t.update.grad_w);
        out["grad_b"] = to_array(t.update.grad_b);
        out["grad_w2"] = to_array(t.update.grad_w2);
        out["grad_b2"] = to_array(t.update.grad_b2);
        out["leakage_rate"] = leakage_rate_oracle(t.z, t.z_act, t.z_act_grad);
        return out;
      },
      py::arg("w"), py::arg("b"), py::arg("w2"), py::arg("b2"), py::arg("irs"), py::arg("labels"),
      "Client gradient of the head on a batch of IRs, plus the oracle leakage rate.");

  m.def(
      "extract_candidates",
      [](const Array& grad_w, const Array& grad_b, double tol, bool dedupe) {
        auto c = extract_candidate_irs(to_tensor(grad_w), to_tensor(grad_b), tol);
        if (dedupe) c = dedupe_candidates(std::move(c));
        py::list out;
        for (const auto& cand : c) out.append(to_array(cand.vector));
        return out;
      },
      py::arg("grad_w"), py::arg("grad_b"), py::arg("tol") = kDefaultBiasTolerance, py::arg("dedupe") = true);

  m.def("gaussian_sigma", &gaussian_sigma, py::arg("epsilon"), py::arg("delta"), py::arg("clip"));

  m.def(
      "ssim", [](const Array& a, const Array& b) { return ssim(to_tensor(a), to_tensor(b)); }, py::arg("reconstructed"),
      py::arg("reference"));
  m.def(
      "psnr", [](const Array& a, const Array& b) { return psnr(to_tensor(a), to_tensor(b)); }, py::arg("reconstructed"),
      py::arg("reference"));

  m.def(
      "normalized_entropy",
      [](const Array& v, double bin_width) {
        return normalized_entropy(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), bin_width);
      },
      py::arg("values"), py::arg("bin_width") = kDefaultBinWidth);
  m.def(
      "scan_checkpoint",
      [](const std::filesystem::path& p) { return scan_dict(scan_checkpoint(read_checkpoint_file(p))); },
      py::arg("path"));

  m.def(
      "ir_match",
      [](const Classifier& model, const Array& target, int iterations, double step, int restarts,
         std::uint64_t seed) {
        IrMatchConfig cfg;
        cfg.iterations = iterations;
        cfg.perturb_period = std::max(1, iterations / 10);
        cfg.seed_step = cfg.generator_step = step;
        cfg.restarts = restarts;
        cfg.seed = seed;
        const auto& s = model.extractor.spec();
        GeneratorSpec g;
        g.channels = s.channels;
        g.height = s.height;
        g.width = s.width;
        const IrMatchResult r = ir_match(to_tensor(target), model.extractor, g, cfg);
        return py::make_tuple(to_array(r.image), r.best_loss);
      },
      py::arg("model"), py::arg("target"), py::arg("iterations") = 1000, py::arg("step") = 0.1,
      py::arg("restarts") = 1, py::arg("seed") = 0, "Returns (image (1, C, H, W), best loss).");

  m.def("default_config", [] { return ExperimentConfig().to_json(); });
  m.def(
      "run_stage",
      [](const std::string& stage, const std::string& config_json, const std::filesystem::path& out,
         std::size_t jobs) {
        ExperimentConfig c = ExperimentConfig::from_json(config_json);
        c.out_dir = out;
        RunOptions options;
        options.jobs = jobs;
        py::gil_scoped_release release;
        return run_stage(stage, c, options).anomalous;
      },
      py::arg("stage"), py::arg("config_json"), py::arg("out"), py::arg("jobs") = 1,
      "Runs one pipeline stage (or 'demo'); returns the detect verdict.");
}
