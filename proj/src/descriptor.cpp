#include "blindcluster/descriptor.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "blindcluster/common.hpp"

namespace blindcluster {

namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void save_descriptors_csv(const std::vector<ImageDescriptor>& descriptors,
                          const std::vector<std::string>& ids, const std::string& path) {
    if (descriptors.size() != ids.size())
        throw param_error("save_descriptors_csv: ids/descriptors size mismatch");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("save_descriptors_csv: cannot open '" + path + "'");
    const std::size_t dim = descriptors.empty() ? 0 : descriptors.front().values.size();
    out << "image_id";
    for (std::size_t d = 0; d < dim; ++d) out << ",d_" << d;
    out << "\n";
    for (std::size_t i = 0; i < descriptors.size(); ++i) {
        out << ids[i];
        for (double v : descriptors[i].values) out << "," << format_double(v);
        out << "\n";
    }
    if (!out) throw io_error("save_descriptors_csv: write failed for '" + path + "'");
}

std::vector<ImageDescriptor> load_descriptors_csv(const std::string& path,
                                                  std::vector<std::string>* ids) {
    std::ifstream in(path);
    if (!in) throw io_error("load_descriptors_csv: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line.rfind("image_id", 0) != 0)
        throw format_error("load_descriptors_csv: missing header in '" + path + "'");
    std::vector<ImageDescriptor> out;
    int index = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        std::stringstream ss(line);
        std::string field;
        ImageDescriptor d;
        d.image_index = index++;
        bool first = true;
        std::string id;
        while (std::getline(ss, field, ',')) {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            if (first) {
                id = field;
                first = false;
            } else {
                try {
                    d.values.push_back(std::stod(field));
                } catch (const std::exception&) {
                    throw format_error("load_descriptors_csv: bad value '" + field + "' in '" +
                                       path + "'");
                }
            }
        }
        if (ids) ids->push_back(id);
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace blindcluster
