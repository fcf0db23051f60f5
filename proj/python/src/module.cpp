#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <map>
#include <string>

#include "nowcast/error.hpp"
#include "nowcast/grid.hpp"
#include "nowcast/metrics.hpp"
#include "nowcast/optflow.hpp"
#include "nowcast/pipeline.hpp"

namespace py = pybind11;
using namespace nowcast;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Config to_config(const std::map<std::string, py::object>& kv) {
  Config c;
  for (const auto& [k, v] : kv) {
    std::string s;
    if (py::isinstance<py::bool_>(v)) {
      s = v.cast<bool>() ? "true" : "false";
    } else {
      s = py::str(v).cast<std::string>();
    }
    c.set(k, s);
  }
  return c;
}

std::pair<int, int> plane_shape(const FloatArray& a, const char* what) {
  if (a.ndim() != 2) throw ShapeMismatch(std::string(what) + " must be a 2-D array");
  return {static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1))};
}

std::span<const float> view(const FloatArray& a) {
  return {a.data(), static_cast<std::size_t>(a.size())};
}

FloatArray to_array(const std::vector<float>& v, int h, int w) {
  FloatArray out({h, w});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

ClassScheme scheme_of(const std::vector<double>& thresholds, double minutes) {
  ClassScheme s;
  s.thresholds_mm_per_h = thresholds;
  s.accumulation_minutes = minutes;
  s.validate();
  return s;
}

}  // namespace

PYBIND11_MODULE(_nowcast, m) {
  m.doc() = "Precipitation nowcasting toolkit";
  m.attr("__version__") = kToolkitVersion;

  static py::exception<Error> base(m, "NowcastError");
  static py::exception<ContractViolation> contract(m, "ContractViolation", base.ptr());
  static py::exception<DomainError> domain(m, "DomainError", base.ptr());
  static py::exception<ShapeMismatch> shape(m, "ShapeMismatch", base.ptr());
  static py::exception<IngestionError> ingestion(m, "IngestionError", base.ptr());
  static py::exception<NumericalError> numerical(m, "NumericalError", base.ptr());
  static py::exception<IoError> io(m, "IoError", base.ptr());
  static py::exception<FormatError> format(m, "FormatError", base.ptr());
  static py::exception<ConfigError> config(m, "ConfigError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ContractViolation& e) {
      contract(e.what());
    } catch (const DomainError& e) {
      domain(e.what());
    } catch (const ShapeMismatch& e) {
      shape(e.what());
    } catch (const IngestionError& e) {
      ingestion(e.what());
    } catch (const NumericalError& e) {
      numerical(e.what());
    } catch (const IoError& e) {
      io(e.what());
    } catch (const FormatError& e) {
      format(e.what());
    } catch (const ConfigError& e) {
      config(e.what());
    } catch (const Error& e) {
      base(e.what());
    }
  });

  const std::vector<double> default_thresholds{0.1, 1.0, 2.5};

  m.def("cutoffs",
        [](const std::vector<double>& thresholds, double minutes) {
          return scheme_of(thresholds, minutes).cutoffs();
        },
        py::arg("thresholds") = default_thresholds, py::arg("accumulation_minutes") = 5.0,
        "Class cutoffs in mm per accumulation window.");

  m.def("threshold_classes",
        [](const FloatArray& crf, const std::vector<double>& thresholds, double minutes) {
          const auto [h, w] = plane_shape(crf, "crf");
          const ClassMap c = threshold_classes(view(crf), h, w, scheme_of(thresholds, minutes));
          ByteArray out({c.n_classes, h, w});
          std::copy(c.labels.begin(), c.labels.end(), out.mutable_data());
          return out;
        },
        py::arg("crf"), py::arg("thresholds") = default_thresholds,
        py::arg("accumulation_minutes") = 5.0,
        "Nested exceedance classes of a physical CRF plane, shape (classes, H, W).");

  m.def("normalize_crf",
        [](const FloatArray& x, double max_crf) {
          NormStats s;
          s.max_crf = max_crf;
          s.validate();
          FloatArray out(std::vector<py::ssize_t>(x.shape(), x.shape() + x.ndim()));
          for (py::ssize_t i = 0; i < x.size(); ++i)
            out.mutable_data()[i] = normalize_crf_value(x.data()[i], s);
          return out;
        },
        py::arg("crf"), py::arg("max_crf"));

  m.def("confusion",
        [](const FloatArray& probs, const ByteArray& labels, std::optional<ByteArray> valid) {
          if (probs.ndim() != 3 || labels.ndim() != 3)
            throw ShapeMismatch("probs and labels must be (classes, H, W)");
          for (int d = 0; d < 3; ++d)
            if (probs.shape(d) != labels.shape(d)) throw ShapeMismatch("probs and labels differ in shape");
          const int n = static_cast<int>(probs.shape(0)), h = static_cast<int>(probs.shape(1)),
                    w = static_cast<int>(probs.shape(2));
          ProbMap p(n, h, w);
          std::copy(probs.data(), probs.data() + probs.size(), p.probs.begin());
          ClassMap t(n, h, w);
          std::copy(labels.data(), labels.data() + labels.size(), t.labels.begin());
          if (valid) {
            if (valid->size() != static_cast<py::ssize_t>(t.valid.size()))
              throw ShapeMismatch("valid must be (H, W)");
            std::copy(valid->data(), valid->data() + valid->size(), t.valid.begin());
          }
          const ConfusionCounts c = confusion(p, t);
          py::array_t<std::uint64_t> out({n, 4});
          auto r = out.mutable_unchecked<2>();
          for (int k = 0; k < n; ++k) {
            const ClassCounts& cc = c.classes[static_cast<std::size_t>(k)];
            r(k, 0) = cc.tp;
            r(k, 1) = cc.tn;
            r(k, 2) = cc.fp;
            r(k, 3) = cc.fn;
          }
          return out;
        },
        py::arg("probs"), py::arg("labels"), py::arg("valid") = py::none(),
        "Per-class counts as rows (tp, tn, fp, fn).");

  m.def("scores",
        [](py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast> counts) {
          if (counts.ndim() != 2 || counts.shape(1) != 4) throw ShapeMismatch("counts must be (classes, 4)");
          ConfusionCounts c(static_cast<int>(counts.shape(0)));
          auto r = counts.unchecked<2>();
          for (py::ssize_t k = 0; k < counts.shape(0); ++k)
            c.classes[static_cast<std::size_t>(k)] = {r(k, 0), r(k, 1), r(k, 2), r(k, 3)};
          py::list out;
          for (int k = 0; k < c.n_classes(); ++k) {
            py::dict d;
            d["f1"] = f1_score(c, k);
            d["ts"] = threat_score(c, k);
            d["bias"] = bias(c, k);
            d["precision"] = precision(c, k);
            d["recall"] = recall(c, k);
            out.append(d);
          }
          return out;
        },
        py::arg("counts"), "Scores per class; None where undefined.");

  m.def("estimate_flow",
        [](const FloatArray& prev, const FloatArray& next, double alpha, int max_iters, double tol) {
          const auto [h, w] = plane_shape(prev, "prev");
          plane_shape(next, "next");
          FlowConfig cfg;
          cfg.alpha = alpha;
          cfg.max_iters = max_iters;
          cfg.tol = tol;
          const FlowField f = estimate_flow(view(prev), view(next), h, w, cfg);
          return py::make_tuple(to_array(f.u, h, w), to_array(f.v, h, w));
        },
        py::arg("prev"), py::arg("next"), py::arg("alpha") = 0.1, py::arg("max_iters") = 2000,
        py::arg("tol") = 1e-7, "Horn-Schunck flow (u along columns, v along rows).");

  m.def("advect",
        [](const FloatArray& field, const FloatArray& u, const FloatArray& v, double dt,
           double cfl_max, bool zero_inflow) {
          const auto [h, w] = plane_shape(field, "field");
          if (plane_shape(u, "u") != std::pair{h, w} || plane_shape(v, "v") != std::pair{h, w})
            throw ShapeMismatch("u and v must match the field");
          FlowField f(h, w);
          f.u.assign(u.data(), u.data() + u.size());
          f.v.assign(v.data(), v.data() + v.size());
          const auto out = advect(view(field), h, w, f, dt, cfl_max,
                                  zero_inflow ? Boundary::ZeroInflow : Boundary::Clamp);
          return to_array(out, h, w);
        },
        py::arg("field"), py::arg("u"), py::arg("v"), py::arg("dt") = 1.0,
        py::arg("cfl_max") = 1.0, py::arg("zero_inflow") = true);

  using Dict = std::map<std::string, py::object>;
  m.def("synth",
        [](const std::filesystem::path& out_dir, const Dict& config) {
          cmd_synth(to_config(config), out_dir);
        },
        py::arg("out_dir"), py::arg("config") = Dict{});
  m.def("dataset",
        [](const std::filesystem::path& stacks, const std::filesystem::path& out_dir,
           const Dict& config) { cmd_dataset(to_config(config), stacks, out_dir); },
        py::arg("stacks"), py::arg("out_dir"), py::arg("config") = Dict{});
  m.def("train",
        [](const std::filesystem::path& dataset, const std::filesystem::path& out_dir,
           const Dict& config) {
          const Config c = to_config(config);
          py::gil_scoped_release release;
          cmd_train(c, dataset, out_dir);
        },
        py::arg("dataset"), py::arg("out_dir"), py::arg("config") = Dict{});
  m.def("evaluate",
        [](const std::filesystem::path& dataset, const std::filesystem::path& out_dir,
           const std::vector<std::filesystem::path>& checkpoints,
           const std::vector<std::string>& baselines, const Dict& config) {
          cmd_eval(to_config(config), dataset, checkpoints, baselines, out_dir);
        },
        py::arg("dataset"), py::arg("out_dir"),
        py::arg("checkpoints") = std::vector<std::filesystem::path>{},
        py::arg("baselines") = std::vector<std::string>{"persistence", "optflow"},
        py::arg("config") = Dict{});
}
