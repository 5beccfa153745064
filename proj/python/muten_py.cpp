#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "muten/attacks.hpp"
#include "muten/dataset.hpp"
#include "muten/diversity.hpp"
#include "muten/ensemble.hpp"
#include "muten/harness.hpp"
#include "muten/model_io.hpp"
#include "muten/mutation.hpp"
#include "muten/train.hpp"

namespace py = pybind11;
using namespace muten;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a, const Shape& expect) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    if (shape_size(shape) != shape_size(expect)) {
        throw ShapeError("input has shape " + shape_to_string(shape) + ", model expects " + shape_to_string(expect));
    }
    return Tensor(expect, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor& t) {
    FloatArray out(std::vector<py::ssize_t>(t.shape.begin(), t.shape.end()));
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

FloatArray to_array(const std::vector<float>& v) {
    FloatArray out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::dict attack_dict(const AttackResult& r) {
    py::dict d;
    d["adversarial"] = to_array(r.adversarial);
    d["success"] = r.success;
    d["queries"] = r.queries;
    d["wall_time"] = r.wall_time;
    d["l2_dist"] = r.l2_dist;
    d["linf_dist"] = r.linf_dist;
    d["aborted"] = r.aborted;
    return d;
}

}  // namespace

PYBIND11_MODULE(_muten, m) {
    m.doc() = "Mutant-ensemble gradient attacks on small CNNs";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ShapeError>(m, "ShapeError", m.attr("Error").ptr());
    py::register_exception<ConfigError>(m, "ConfigError", m.attr("Error").ptr());
    py::register_exception<TrainingError>(m, "TrainingError", m.attr("Error").ptr());
    py::register_exception<IoError>(m, "IoError", m.attr("Error").ptr());
    py::register_exception<FormatError>(m, "FormatError", m.attr("IoError").ptr());
    py::register_exception<VersionError>(m, "VersionError", m.attr("FormatError").ptr());
    py::register_exception<ChecksumError>(m, "ChecksumError", m.attr("FormatError").ptr());
    py::register_exception<TruncatedError>(m, "TruncatedError", m.attr("FormatError").ptr());
    py::register_exception<DatasetError>(m, "DatasetError", m.attr("IoError").ptr());
    py::register_exception<DegenerateMutation>(m, "DegenerateMutation", m.attr("Error").ptr());
    py::register_exception<UndefinedSimilarity>(m, "UndefinedSimilarity", m.attr("Error").ptr());

    py::class_<Network>(m, "Network")
        .def_property_readonly("input_shape", &Network::input_shape)
        .def_property_readonly("num_classes", &Network::num_classes)
        .def_property("temperature", &Network::temperature, &Network::set_temperature)
        .def_property_readonly("weight_count", &Network::weight_count)
        .def_property_readonly("neuron_count", &Network::neuron_count)
        .def_property_readonly("feature_size", &Network::feature_size)
        .def("digest", [](const Network& n) { return weight_digest(n); })
        .def("forward",
             [](const Network& n, const FloatArray& x) {
                 const auto r = forward(n, to_tensor(x, n.input_shape()));
                 return py::make_tuple(to_array(r.probs), to_array(r.logits), to_array(r.features), r.predicted);
             },
             py::arg("x"), "Returns (probs, logits, features, predicted).")
        .def("input_gradient",
             [](const Network& n, const FloatArray& x, std::size_t label, const std::string& loss) {
                 const auto spec = loss_kind_from_string(loss) == LossKind::cw ? LossSpec::cw(0.0f) : LossSpec{};
                 const auto g = input_gradient(n, to_tensor(x, n.input_shape()), label, spec);
                 return py::make_tuple(to_array(g.wrt_input), g.loss_value);
             },
             py::arg("x"), py::arg("label"), py::arg("loss") = "cross_entropy")
        .def("save", [](const Network& n, const std::filesystem::path& p) { save_model(n, p); })
        .def("to_bytes",
             [](const Network& n) {
                 const auto b = encode_model(n);
                 return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
             })
        .def_static("from_bytes",
                    [](const py::bytes& b) {
                        const std::string s = b;
                        return decode_model(std::vector<std::uint8_t>(s.begin(), s.end()));
                    })
        .def("header_json", [](const Network& n) { return model_header_json(n); });

    m.def("make_lenet", [](std::uint64_t seed) {
        auto net = make_lenet();
        init_he_uniform(net, seed);
        return net;
    }, py::arg("seed") = 1, "He-initialized Lenet-5 for 1x28x28 inputs.");
    m.def("load_model", &load_model, py::arg("path"));
    m.def("same_weights", &same_weights);

    py::class_<Dataset>(m, "Dataset")
        .def_property_readonly("size", &Dataset::size)
        .def_readonly("rows", &Dataset::rows)
        .def_readonly("cols", &Dataset::cols)
        .def("__len__", &Dataset::size)
        .def_property_readonly("images",
                               [](const Dataset& d) {
                                   FloatArray a({static_cast<py::ssize_t>(d.size()), static_cast<py::ssize_t>(d.rows),
                                                 static_cast<py::ssize_t>(d.cols)});
                                   std::copy(d.pixels.begin(), d.pixels.end(), a.mutable_data());
                                   return a;
                               })
        .def_property_readonly("labels", [](const Dataset& d) { return d.labels; })
        .def("subset", [](const Dataset& d, const std::vector<std::size_t>& idx) { return d.subset(idx); })
        .def_static("from_arrays", [](const FloatArray& images, const std::vector<std::uint8_t>& labels) {
            if (images.ndim() != 3) throw ShapeError("images must be [n, rows, cols]");
            if (static_cast<std::size_t>(images.shape(0)) != labels.size()) throw ShapeError("image/label count mismatch");
            Dataset d;
            d.rows = static_cast<std::size_t>(images.shape(1));
            d.cols = static_cast<std::size_t>(images.shape(2));
            d.pixels.assign(images.data(), images.data() + images.size());
            d.labels = labels;
            return d;
        });

    m.def("load_dataset", [](const std::filesystem::path& dir, const std::string& split) {
        return load_dataset(dir, split_from_string(split));
    }, py::arg("dir"), py::arg("split") = "test");
    m.def("accuracy", &accuracy);
    m.def("train",
          [](Network net, const Dataset& train_set, const Dataset* test_set, std::size_t epochs, double lr,
             double temperature, std::size_t batch_size, std::uint64_t seed) {
              TrainConfig cfg;
              cfg.epochs = epochs;
              cfg.learning_rate = lr;
              cfg.temperature = temperature;
              cfg.batch_size = batch_size;
              cfg.seed = seed;
              TrainResult r;
              {
                  py::gil_scoped_release release;
                  r = train(std::move(net), train_set, test_set, cfg);
              }
              return py::make_tuple(std::move(r.net), r.test_accuracy, r.epoch_loss);
          },
          py::arg("net"), py::arg("train_set"), py::arg("test_set") = nullptr, py::arg("epochs") = 3,
          py::arg("lr") = 1e-3, py::arg("temperature") = 1.0, py::arg("batch_size") = 32, py::arg("seed") = 1,
          "Returns (network, test_accuracy, epoch_losses).");

    py::class_<Mutant>(m, "Mutant")
        .def_readonly("network", &Mutant::network)
        .def_property_readonly("op", [](const Mutant& x) { return to_string(x.spec.op); })
        .def_property_readonly("ratio", [](const Mutant& x) { return x.spec.ratio; })
        .def_property_readonly("seed", [](const Mutant& x) { return x.spec.seed; })
        .def_readonly("parent_hash", &Mutant::parent_hash)
        .def_readonly("probe_accuracy", &Mutant::probe_accuracy);

    m.def("mutate", [](const Network& net, const std::string& op, double ratio, std::uint64_t seed) {
        return mutate(net, MutationSpec{mutation_operator_from_string(op), ratio, seed});
    }, py::arg("net"), py::arg("op"), py::arg("ratio"), py::arg("seed"));
    m.def("mutation_targets", [](const Network& net, const std::string& op, double ratio) {
        return mutation_targets(net, MutationSpec{mutation_operator_from_string(op), ratio, 0});
    });

    m.def("linear_cka", [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
        return linear_cka(FeatureMatrix{a}, FeatureMatrix{b});
    }, py::arg("x"), py::arg("y"), "Linear CKA between two [samples, features] matrices.");
    m.def("extract_features", [](const Network& net, const Dataset& probe) { return extract_features(net, probe).values; });
    m.def("pagerank", [](const Eigen::MatrixXd& sim, double damping, double tol) {
        SimilarityMatrix s;
        s.values = sim;
        return pagerank(s, damping, tol).scores;
    }, py::arg("similarity"), py::arg("damping") = 0.85, py::arg("tol") = 1e-8);

    m.def("greedy_generate",
          [](const Network& net, const Dataset& probe, std::size_t n, const std::string& mode, std::uint64_t seed,
             std::size_t iterations) {
              const auto opts = greedy_options_for(mutant_mode_from_string(mode), n, seed, iterations);
              GreedyResult g;
              {
                  py::gil_scoped_release release;
                  g = greedy_generate(net, probe, opts);
              }
              py::dict d;
              d["mutants"] = g.mutants;
              d["similarity"] = g.similarity.values;
              d["ids"] = g.similarity.ids;
              d["evictions"] = g.evictions.size();
              d["generated"] = g.generated;
              d["rejected"] = g.rejected;
              d["partial"] = g.partial;
              return d;
          },
          py::arg("net"), py::arg("probe"), py::arg("n") = 5, py::arg("mode") = "diverse", py::arg("seed") = 0,
          py::arg("iterations") = 0);

    py::class_<GradientProvider>(m, "GradientProvider")
        .def("predict",
             [](const GradientProvider& p, const FloatArray& x) {
                 const auto r = p.predict(to_tensor(x, p.input_shape()));
                 return py::make_tuple(to_array(r.probs), r.label);
             })
        .def("gradient",
             [](const GradientProvider& p, const FloatArray& x, std::size_t label, const std::string& loss) {
                 const auto spec = loss_kind_from_string(loss) == LossKind::cw ? LossSpec::cw(0.0f) : LossSpec{};
                 return to_array(p.loss_gradient(to_tensor(x, p.input_shape()), label, spec).wrt_input);
             },
             py::arg("x"), py::arg("label"), py::arg("loss") = "cross_entropy")
        .def_property_readonly("member_count", &GradientProvider::member_count);

    py::class_<SingleModel, GradientProvider>(m, "SingleModel").def(py::init<Network>());
    py::class_<EnsembleModel, GradientProvider>(m, "EnsembleModel")
        .def(py::init([](const Network& original, const std::vector<Network>& mutants) {
            std::vector<std::shared_ptr<const Network>> ms;
            for (const auto& x : mutants) ms.push_back(std::make_shared<const Network>(x));
            return EnsembleModel(std::make_shared<const Network>(original), std::move(ms));
        }), py::arg("original"), py::arg("mutants"));
    m.def("load_ensemble", &load_ensemble);
    m.def("save_ensemble_manifest", &save_ensemble_manifest);

    m.def("attack",
          [](const GradientProvider& provider, const GradientProvider& victim, const FloatArray& x, std::size_t label,
             const std::string& family, double param, std::uint64_t seed) {
              const auto cfg = AttackConfig::standard(attack_family_from_string(family), param);
              return attack_dict(run_attack(provider, victim, to_tensor(x, provider.input_shape()), label, cfg, seed));
          },
          py::arg("provider"), py::arg("victim"), py::arg("x"), py::arg("label"), py::arg("family"), py::arg("param"),
          py::arg("seed") = 0,
          "Runs one attack with the standard settings for a grid point; param is eps or c.");

    m.attr("CSV_HEADER") = kCsvHeader;
    m.def("run_experiment",
          [](const std::filesystem::path& dataset, const std::filesystem::path& victim,
             const std::map<std::string, std::vector<double>>& grid, std::size_t mutants, const std::string& mode,
             std::size_t repeats, std::size_t budget, std::uint64_t seed) {
              ExperimentPlan plan;
              plan.dataset = dataset;
              plan.victim = victim;
              for (const auto& [name, params] : grid) plan.grid.push_back({attack_family_from_string(name), params});
              plan.mutant_count = mutants;
              plan.mode = mutant_mode_from_string(mode);
              plan.repeats = repeats;
              plan.sample_budget = budget;
              plan.seed = seed;
              std::string csv;
              {
                  py::gil_scoped_release release;
                  csv = run_experiment(plan).to_csv();
              }
              return csv;
          },
          py::arg("dataset"), py::arg("victim"), py::arg("grid"), py::arg("mutants") = 5, py::arg("mode") = "diverse",
          py::arg("repeats") = 5, py::arg("budget") = 500, py::arg("seed") = 2021, "Returns the result CSV text.");
}
