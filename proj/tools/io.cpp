#include "io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "config.hpp"

namespace esde::cli {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        cell.erase(std::remove_if(cell.begin(), cell.end(),
                                  [](char c) { return c == ' ' || c == '\r' || c == '\t'; }),
                   cell.end());
        out.push_back(cell);
    }
    return out;
}

[[noreturn]] void bad_row(const std::filesystem::path& path, int line, const std::string& what) {
    throw ConfigError(path.string() + ":" + std::to_string(line) + ": " + what);
}

double to_double(const std::filesystem::path& path, int line, const std::string& s) {
    try {
        std::size_t used = 0;
        const double x = std::stod(s, &used);
        if (used == s.size()) {
            return x;
        }
    } catch (const std::exception&) {
    }
    bad_row(path, line, "expected a number, got '" + s + "'");
}

long to_index(const std::filesystem::path& path, int line, const std::string& s) {
    try {
        std::size_t used = 0;
        const long x = std::stol(s, &used);
        if (used == s.size() && x >= 0) {
            return x;
        }
    } catch (const std::exception&) {
    }
    bad_row(path, line, "expected a non-negative integer, got '" + s + "'");
}

/// Lines after the header; throws on an empty file or a header mismatch.
std::vector<std::string> csv_body(const std::filesystem::path& path, const std::string& expected_prefix,
                                  std::vector<std::string>* header) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open '" + path.string() + "'");
    }
    std::string line;
    if (!std::getline(in, line) || line.find_first_not_of(" \r\t") == std::string::npos) {
        throw ConfigError(path.string() + ": empty file (missing header)");
    }
    *header = split_csv(line);
    if (header->empty() || line.rfind(expected_prefix, 0) != 0) {
        throw ConfigError(path.string() + ":1: header must start with '" + expected_prefix + "'");
    }
    std::vector<std::string> body;
    while (std::getline(in, line)) {
        body.push_back(line);
    }
    return body;
}

} // namespace

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot write '" + path.string() + "'");
    }
    out << text;
}

void write_spike_csv(const std::filesystem::path& path, const std::vector<SpikeTrains>& batch) {
    std::ostringstream out;
    out << "sample_id,neuron_id,spike_time\n";
    for (std::size_t b = 0; b < batch.size(); ++b) {
        for (std::size_t k = 0; k < batch[b].size(); ++k) {
            for (double t : batch[b][k]) {
                out << b << ',' << k << ',' << format_double(t) << '\n';
            }
        }
    }
    write_text(path, out.str());
}

std::vector<SpikeTrains> read_spike_csv(const std::filesystem::path& path, std::size_t samples,
                                        int neurons) {
    std::vector<std::string> header;
    const auto body = csv_body(path, "sample_id,neuron_id,spike_time", &header);
    struct Row {
        std::size_t sample;
        std::size_t neuron;
        double time;
    };
    std::vector<Row> rows;
    std::size_t max_sample = 0;
    std::size_t max_neuron = 0;
    int line = 1;
    for (const auto& text : body) {
        ++line;
        if (text.find_first_not_of(" \r\t") == std::string::npos) {
            continue;
        }
        const auto cells = split_csv(text);
        if (cells.size() != 3) {
            bad_row(path, line, "expected 3 columns");
        }
        Row r{static_cast<std::size_t>(to_index(path, line, cells[0])),
              static_cast<std::size_t>(to_index(path, line, cells[1])),
              to_double(path, line, cells[2])};
        max_sample = std::max(max_sample, r.sample + 1);
        max_neuron = std::max(max_neuron, r.neuron + 1);
        rows.push_back(r);
    }
    const std::size_t S = samples > 0 ? samples : max_sample;
    const std::size_t K = neurons > 0 ? static_cast<std::size_t>(neurons) : max_neuron;
    if (max_sample > S || max_neuron > K) {
        throw ConfigError(path.string() + ": ids exceed the configured sample or neuron count");
    }
    std::vector<SpikeTrains> out(S, SpikeTrains(K));
    for (const auto& r : rows) {
        out[r.sample][r.neuron].push_back(r.time);
    }
    for (auto& trains : out) {
        for (auto& t : trains) {
            std::sort(t.begin(), t.end());
        }
    }
    return out;
}

std::vector<CadlagPath> read_node_csv(const std::filesystem::path& path) {
    std::vector<std::string> header;
    const auto body = csv_body(path, "path_id,time", &header);
    if (header.size() < 4 || header.back() != "is_jump") {
        throw ConfigError(path.string() + ":1: expected columns path_id,time,v_1..v_d,is_jump");
    }
    const std::size_t d = header.size() - 3;
    std::vector<CadlagPath> out;
    std::vector<std::vector<double>> cols;
    long current = -1;
    auto flush = [&] {
        if (current < 0) {
            return;
        }
        CadlagPath& p = out.back();
        p.values.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j) {
            for (std::size_t i = 0; i < d; ++i) {
                p.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cols[j][i];
            }
        }
        cols.clear();
    };
    int line = 1;
    for (const auto& text : body) {
        ++line;
        if (text.find_first_not_of(" \r\t") == std::string::npos) {
            continue;
        }
        const auto cells = split_csv(text);
        if (cells.size() != header.size()) {
            bad_row(path, line, "expected " + std::to_string(header.size()) + " columns");
        }
        const long id = to_index(path, line, cells[0]);
        if (id != current) {
            if (id < current) {
                bad_row(path, line, "rows of one path must be consecutive");
            }
            flush();
            out.emplace_back();
            current = id;
        }
        CadlagPath& p = out.back();
        const double t = to_double(path, line, cells[1]);
        if (!p.times.empty() && t < p.times.back()) {
            bad_row(path, line, "times must be non-decreasing within a path");
        }
        p.times.push_back(t);
        std::vector<double> v(d);
        for (std::size_t i = 0; i < d; ++i) {
            v[i] = to_double(path, line, cells[2 + i]);
        }
        cols.push_back(std::move(v));
        const long jump = to_index(path, line, cells.back());
        if (jump > 1) {
            bad_row(path, line, "is_jump must be 0 or 1");
        }
        p.jump.push_back(jump == 1);
    }
    flush();
    return out;
}

void write_train_csv(const std::filesystem::path& dir, const TrainRun& run) {
    std::ostringstream train;
    train << "step,loss,test_metric,param_error\n";
    std::ostringstream params;
    params << "step";
    for (const auto& name : run.param_names) {
        params << ",\"" << name << '"';
    }
    params << '\n';
    for (const auto& r : run.records) {
        train << r.step << ',' << format_double(r.loss) << ',' << format_double(r.test_metric) << ','
              << format_double(r.param_error) << '\n';
        params << r.step;
        for (Eigen::Index i = 0; i < r.params.size(); ++i) {
            params << ',' << format_double(r.params(i));
        }
        params << '\n';
    }
    write_text(dir / "train.csv", train.str());
    write_text(dir / "params.csv", params.str());
}

} // namespace esde::cli
