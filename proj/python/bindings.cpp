#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hlvae/cli.hpp"
#include "hlvae/elbo.hpp"
#include "hlvae/error.hpp"
#include "hlvae/metrics.hpp"
#include "hlvae/predict.hpp"
#include "hlvae/synthetic.hpp"
#include "hlvae/train.hpp"

namespace py = pybind11;
using namespace hlvae;
using nlohmann::json;

namespace {

py::array_t<double> matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  py::array_t<double> out({rows, cols});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::array_t<std::uint8_t> mask_matrix(const DatasetTable& t) {
  py::array_t<std::uint8_t> out({t.rows(), t.num_features()});
  std::copy(t.mask().begin(), t.mask().end(), out.mutable_data());
  return out;
}

std::vector<double> flat(const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                         std::size_t cols, const char* what) {
  if (a.ndim() != 2 || static_cast<std::size_t>(a.shape(1)) != cols) {
    throw ShapeMismatch(std::string(what) + " must have shape (rows, " + std::to_string(cols) + ")");
  }
  return {a.data(), a.data() + a.size()};
}

py::list cells_to_list(const std::vector<CellNll>& cells) {
  py::list out;
  for (const auto& c : cells) out.append(py::make_tuple(c.row, c.feature, c.nll));
  return out;
}

py::list report_to_list(const MetricReport& r) {
  py::list out;
  for (const auto& row : r.rows) {
    py::dict d;
    d["scope"] = row.scope;
    d["metric"] = row.metric;
    d["value"] = row.value;
    d["cells"] = row.cells;
    out.append(d);
  }
  return out;
}

std::vector<HeldOutCell> to_cells(const std::vector<std::tuple<std::size_t, std::size_t, double>>& v) {
  std::vector<HeldOutCell> out;
  for (const auto& [r, f, x] : v) out.push_back({r, f, x});
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Heterogeneous longitudinal VAE with an additive GP prior";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  auto numerical = py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
#define HLVAE_PY_ERROR(Name, Base) py::register_exception<Name>(m, #Name, Base.ptr());
  HLVAE_PY_ERROR(ShapeMismatch, base)
  HLVAE_PY_ERROR(NotScalar, base)
  HLVAE_PY_ERROR(NonFiniteValue, numerical)
  HLVAE_PY_ERROR(FactorizationFailure, numerical)
  HLVAE_PY_ERROR(SingularTriangular, numerical)
  HLVAE_PY_ERROR(SchemaMismatch, base)
  HLVAE_PY_ERROR(DomainViolation, base)
  HLVAE_PY_ERROR(MissingCovariate, base)
  HLVAE_PY_ERROR(TooFewVisits, base)
  HLVAE_PY_ERROR(ParseError, base)
  HLVAE_PY_ERROR(UnknownCovariate, base)
  HLVAE_PY_ERROR(NotSorted, base)
  HLVAE_PY_ERROR(MissingIndividualComponent, base)
  HLVAE_PY_ERROR(IncompleteInstance, base)
  HLVAE_PY_ERROR(NonFiniteLoss, numerical)
  HLVAE_PY_ERROR(UnknownInstance, base)
  HLVAE_PY_ERROR(EmptyHoldout, base)
#undef HLVAE_PY_ERROR

  py::class_<Schema>(m, "Schema")
      .def_static("from_json", [](const std::string& s) { return Schema::from_json(json::parse(s)); })
      .def_static("load", &Schema::load)
      .def("to_json", [](const Schema& s) { return s.to_json().dump(); })
      .def("save", &Schema::save)
      .def("all_gaussian", &Schema::all_gaussian)
      .def_property_readonly("feature_names",
                             [](const Schema& s) {
                               std::vector<std::string> out;
                               for (const auto& f : s.features) out.push_back(f.name);
                               return out;
                             })
      .def_property_readonly("covariate_names",
                             [](const Schema& s) {
                               std::vector<std::string> out;
                               for (const auto& c : s.covariates) out.push_back(c.name);
                               return out;
                             })
      .def_property_readonly("likelihoods",
                             [](const Schema& s) {
                               std::vector<std::string> out;
                               for (const auto& f : s.features) out.push_back(to_string(f.likelihood));
                               return out;
                             })
      .def("__eq__", &Schema::operator==);

  py::class_<DatasetTable>(m, "Table")
      .def(py::init([](const Schema& s, const py::array_t<double, py::array::c_style | py::array::forcecast>& cov,
                       const py::array_t<double, py::array::c_style | py::array::forcecast>& val,
                       const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& mask) {
             auto c = flat(cov, s.num_covariates(), "covariates");
             auto v = flat(val, s.num_features(), "values");
             if (static_cast<std::size_t>(mask.size()) != v.size()) throw ShapeMismatch("mask must match values");
             return DatasetTable(s, std::move(c), std::move(v),
                                 std::vector<std::uint8_t>(mask.data(), mask.data() + mask.size()));
           }),
           py::arg("schema"), py::arg("covariates"), py::arg("values"), py::arg("observed"))
      .def_static("from_csv", &parse_csv, py::arg("text"), py::arg("schema"))
      .def_static("load", &load_csv, py::arg("path"), py::arg("schema"))
      .def("to_csv", [](const DatasetTable& t) { return to_csv(t); })
      .def("save", [](const DatasetTable& t, const std::string& p) { save_csv(p, t); })
      .def_property_readonly("schema", &DatasetTable::schema)
      .def_property_readonly("rows", &DatasetTable::rows)
      .def_property_readonly("num_instances", &DatasetTable::num_instances)
      .def_property_readonly("covariates",
                             [](const DatasetTable& t) { return matrix(t.covariates(), t.rows(), t.num_covariates()); })
      .def_property_readonly("values",
                             [](const DatasetTable& t) { return matrix(t.values(), t.rows(), t.num_features()); })
      .def_property_readonly("observed", &mask_matrix)
      .def("observed_count", &DatasetTable::observed_count)
      .def("subset", &DatasetTable::subset)
      .def("with_schema", &DatasetTable::with_schema)
      .def("__len__", &DatasetTable::rows);

  m.def(
      "_generate",
      [](const std::string& cfg, std::uint64_t seed) {
        auto d = generate(GenConfig::from_json(json::parse(cfg)), seed);
        const std::size_t L = d.config.latent_dim;
        return py::make_tuple(d.table, matrix(d.latents, d.table.rows(), L));
      },
      py::arg("config"), py::arg("seed"));

  m.def(
      "inject_mcar",
      [](const DatasetTable& t, double ratio, std::uint64_t seed) {
        auto r = inject_mcar(t, ratio, seed);
        std::vector<std::tuple<std::size_t, std::size_t, double>> cells;
        for (const auto& c : r.held_out) cells.emplace_back(c.row, c.feature, c.value);
        return py::make_tuple(r.table, cells);
      },
      py::arg("table"), py::arg("ratio"), py::arg("seed"));

  m.def(
      "split_longitudinal",
      [](const DatasetTable& t, double train, double validation, double test, std::uint64_t seed,
         std::size_t disclose) {
        auto s = split_longitudinal(t, {train, validation, test}, seed, disclose);
        py::dict d;
        d["train"] = s.train;
        d["validation"] = s.validation;
        d["test"] = s.test;
        d["disclosed"] = s.disclosed;
        return d;
      },
      py::arg("table"), py::arg("train") = 0.6, py::arg("validation") = 0.2, py::arg("test") = 0.2,
      py::arg("seed") = 0, py::arg("disclose") = 2);

  py::class_<Model>(m, "Model")
      .def_static(
          "_create",
          [](const DatasetTable& t, const std::string& cfg, std::uint64_t seed) {
            return Model::create(t, ModelConfig::from_json(json::parse(cfg)), seed);
          },
          py::arg("table"), py::arg("config"), py::arg("seed"))
      .def_static("load", &Model::load)
      .def("save", &Model::save)
      .def_property_readonly("schema", [](const Model& mod) { return mod.schema; })
      .def_property_readonly("training", [](const Model& mod) { return mod.training; })
      .def_property_readonly("config", [](const Model& mod) { return mod.config.to_json().dump(); })
      .def("parameter_names",
           [](const Model& mod) {
             std::vector<std::string> out;
             for (const auto& [name, t] : mod.named_parameters()) out.push_back(name);
             return out;
           })
      .def("_train",
           [](Model& mod, const std::string& cfg, const DatasetTable* validation) {
             std::vector<EpochRecord> epochs;
             {
               py::gil_scoped_release release;
               epochs = train(mod, TrainConfig::from_json(json::parse(cfg)), validation).epochs;
             }
             py::list out;
             for (const auto& r : epochs) {
               py::dict d;
               d["epoch"] = r.epoch;
               d["elbo"] = r.elbo;
               d["recon"] = r.recon;
               d["kl"] = r.kl;
               d["val_nll"] = r.val_nll;
               out.append(d);
             }
             return out;
           },
           py::arg("config"), py::arg("validation") = nullptr)
      .def(
          "elbo",
          [](const Model& mod, const std::string& mode, std::uint64_t seed) {
            Rng rng(seed);
            auto t = elbo(mod.training, mod, parse_kl_mode(mode), 1.0, rng, mod.training);
            return py::make_tuple(t.objective.item(), t.reconstruction.item(), t.kl.item());
          },
          py::arg("mode") = "exact", py::arg("seed") = 0)
      .def("reconstruction_nll", [](const Model& mod, const DatasetTable& t) { return reconstruction_nll(mod, t); })
      .def(
          "latent_predict",
          [](const Model& mod, const py::array_t<double, py::array::c_style | py::array::forcecast>& cov) {
            auto c = flat(cov, mod.schema.num_covariates(), "covariates");
            const std::size_t rows = c.size() / mod.schema.num_covariates();
            auto p = LatentPredictor(mod).predict(c, rows);
            return py::make_tuple(matrix(p.means, rows, p.latent_dim), matrix(p.variances, rows, p.latent_dim));
          },
          py::arg("covariates"));

  auto predict = [](bool future) {
    return [future](const Model& mod, const DatasetTable& q, std::size_t samples, std::uint64_t seed,
                    const std::string& latent) {
      PredictOptions opt{samples, seed, parse_latent_source(latent)};
      auto r = future ? predict_future(q, mod, opt) : impute(q, mod, opt);
      return py::make_tuple(r.filled, cells_to_list(r.nll));
    };
  };
  m.def("impute", predict(false), py::arg("model"), py::arg("table"), py::arg("samples") = 50, py::arg("seed") = 0,
        py::arg("latent") = "auto");
  m.def("predict_future", predict(true), py::arg("model"), py::arg("table"), py::arg("samples") = 50,
        py::arg("seed") = 0, py::arg("latent") = "gp");

  m.def(
      "error_report",
      [](const DatasetTable& pred, const std::vector<std::tuple<std::size_t, std::size_t, double>>& truth,
         const Model& mod, const Schema* truth_schema) {
        return report_to_list(error_report(pred, to_cells(truth), mod.stats, truth_schema));
      },
      py::arg("predicted"), py::arg("held_out"), py::arg("model"), py::arg("truth_schema") = nullptr);

  m.def("nrmse", [](std::vector<double> p, std::vector<double> t, double lo, double hi) { return nrmse(p, t, lo, hi); },
        py::arg("pred"), py::arg("truth"), py::arg("lo"), py::arg("hi"));
  m.def("accuracy_error", [](std::vector<double> p, std::vector<double> t) { return accuracy_error(p, t); });
  m.def("displacement_error",
        [](std::vector<double> p, std::vector<double> t, int levels) { return displacement_error(p, t, levels); });

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "hlvae");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        return run_cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"));
}
