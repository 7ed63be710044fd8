// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cptkit/commands.hpp"

namespace py = pybind11;
using namespace cptkit;

namespace {

EmbeddingSet to_set(const py::array_t<float, py::array::c_style | py::array::forcecast>& a, std::vector<std::string> ids) {
    if (a.ndim() != 2) {
        throw Error(ErrorCode::DimensionMismatch, "embeddings must be a 2-d array");
    }
    const auto* p = a.data();
    return {static_cast<std::size_t>(a.shape(1)), std::vector<float>(p, p + a.size()), std::move(ids)};
}

DataSource to_source(const py::dict& d) {
    DataSource s;
    s.name = d["name"].cast<std::string>();
    const auto domain = d["domain"].cast<std::string>();
    const auto parsed = parse_domain(domain);
    if (!parsed) {
        throw Error(ErrorCode::InvalidParameter, "unknown domain '" + domain + "'");
    }
    s.domain = *parsed;
    s.token_count = d["token_count"].cast<TokenCount>();
    if (d.contains("qa_category")) {
        s.qa_category = parse_qa_category(d["qa_category"].cast<std::string>());
    }
    return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Continued-pretraining planning: schedules, blends, quality filtering and mining.";

    // leaked on purpose: must outlive interpreter teardown
    static auto* error = new py::exception<Error>(m, "CptkitError", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) {
                std::rethrow_exception(p);
            }
        } catch (const Error& e) {
            // message carries the machine-readable code first, e.g. "unreachable-target: ..."
            PyErr_SetString(error->ptr(), (std::string(error_name(e.code())) + ": " + e.what()).c_str());
        }
    });

    py::class_<LrSchedule>(m, "LrSchedule")
        .def_property_readonly("eta_start", &LrSchedule::eta_start)
        .def_property_readonly("eta_end", &LrSchedule::eta_end)
        .def_property_readonly("total_tokens", &LrSchedule::total_tokens)
        .def("__call__", [](const LrSchedule& s, TokenCount t) { return lr_at(s, t); });

    m.def(
        "cosine",
        [](double eta_start, double eta_end, TokenCount total, std::optional<std::tuple<double, TokenCount>> warmup) {
            std::optional<WarmupSpec> w;
            if (warmup) {
                w = WarmupSpec{std::get<0>(*warmup), eta_start, std::get<1>(*warmup)};
            }
            return build_cosine(eta_start, eta_end, total, w);
        },
        py::arg("eta_start"), py::arg("eta_end"), py::arg("total_tokens"), py::arg("warmup") = py::none(),
        "Cosine schedule; warmup is (start_lr, tokens).");
    m.def(
        "wsd",
        [](double eta_start, double eta_end, TokenCount total, double stable_fraction, const std::string& shape) {
            return build_wsd(eta_start, eta_end, total, stable_fraction, shape == "cosine" ? DecayShape::Cosine : DecayShape::Linear);
        },
        py::arg("eta_start"), py::arg("eta_end"), py::arg("total_tokens"), py::arg("stable_fraction") = kDefaultWsdStableFraction,
        py::arg("decay") = "linear");
    m.def("lr_at", &lr_at, py::arg("schedule"), py::arg("token"));
    m.def(
        "switch_token", [](const LrSchedule& s, double f) { return solve_switch_token(s, f).token_index; }, py::arg("schedule"),
        py::arg("lr_fraction"), "Smallest post-warmup token whose LR is at most lr_fraction * eta_start.");
    m.def("lr_curve", &sample_curve, py::arg("schedule"), py::arg("stride"));

    m.def(
        "normalize", [](const RawWeights& w) { return normalize(w).weights(); }, py::arg("weights"));
    m.def(
        "add_qa",
        [](const RawWeights& phase, const std::vector<py::dict>& qa, double qa_weight, const std::string& sub_blend) {
            std::vector<DataSource> sources;
            for (const auto& d : qa) {
                sources.push_back(to_source(d));
            }
            return add_qa(normalize(phase), sources, qa_weight, named_sub_blend(sub_blend, sources)).weights();
        },
        py::arg("phase"), py::arg("qa_sources"), py::arg("qa_weight") = kRecipeQaWeight, py::arg("sub_blend") = "proportional");
    m.def(
        "epochs",
        [](const RawWeights& phase, const std::vector<py::dict>& sources, TokenCount phase_tokens) {
            SourceRegistry r;
            for (const auto& d : sources) {
                r.add(to_source(d));
            }
            std::map<std::string, double> out;
            for (const auto& e : epochs(normalize(phase), r, phase_tokens).entries) {
                out[e.source] = e.epochs;
            }
            return out;
        },
        py::arg("phase"), py::arg("sources"), py::arg("phase_tokens"));

    py::class_<NgramModel>(m, "NgramModel")
        .def_property_readonly("order", &NgramModel::order)
        .def_property_readonly("digest", &NgramModel::digest)
        .def_property_readonly("discounts", &NgramModel::discounts)
        .def(
            "perplexity", [](const NgramModel& model, const std::string& text) { return perplexity(model, tokenize(text)); },
            py::arg("text"))
        .def("to_bytes", [](const NgramModel& model) {
            std::ostringstream out;
            write_model(out, model);
            return py::bytes(out.str());
        });
    m.def(
        "train_ngram",
        [](const std::string& text, int order, bool sentence_end) {
            return train_ngram(tokenize_lines(text), {order, sentence_end});
        },
        py::arg("text"), py::arg("order") = 5, py::arg("sentence_end") = true, "Trains on one sentence per line.");
    m.def(
        "load_ngram",
        [](const py::bytes& data) {
            std::istringstream in{std::string(data)};
            return read_model(in);
        },
        py::arg("data"));
    m.def(
        "quartile_filter",
        [](const std::map<std::string, double>& scores, double quartile) {
            std::vector<ScoredDocument> docs;
            for (const auto& [id, p] : scores) {
                docs.push_back({id, p, ""});
            }
            const auto q = quartile_filter(docs, quartile);
            return std::vector<std::string>(q.selected.begin(), q.selected.end());
        },
        py::arg("scores"), py::arg("quartile") = kDefaultQuartile, "Ids of the lowest-perplexity fraction, sorted.");

    m.def(
        "knn",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& corpus, std::vector<std::string> ids,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& queries, std::size_t k, const std::string& metric) {
            const ExactIndex index(to_set(corpus, std::move(ids)), metric == "inner_product" ? Metric::InnerProduct : Metric::Cosine);
            if (queries.ndim() != 2 || static_cast<std::size_t>(queries.shape(1)) != index.dimension()) {
                throw Error(ErrorCode::DimensionMismatch, "queries must be (n, d) with the corpus dimension");
            }
            std::vector<std::vector<std::pair<std::string, double>>> out;
            const auto d = index.dimension();
            py::gil_scoped_release release;
            for (py::ssize_t q = 0; q < queries.shape(0); ++q) {
                std::vector<std::pair<std::string, double>> row;
                for (const auto& n : index.knn({queries.data() + q * static_cast<py::ssize_t>(d), d}, k)) {
                    row.emplace_back(n.id, n.score);
                }
                out.push_back(std::move(row));
            }
            return out;
        },
        py::arg("corpus"), py::arg("ids"), py::arg("queries"), py::arg("k") = kDefaultMiningK, py::arg("metric") = "cosine",
        "Exact top-k (id, score) per query row.");

    m.def(
        "run",
        [](const std::vector<std::string>& args) {
            std::ostringstream out;
            std::ostringstream err;
            const int code = run_cli(args, out, err);
            return std::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a cptkit command line; returns (exit_code, stdout, stderr).");
}
