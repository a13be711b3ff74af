mod desk;
mod model;
mod obj;

pub use desk::{
    synthesize_desk_model, BROW_DOWN, BROW_UP, EYELID_CLOSE, EYELID_WIDEN, JAW_DROP, LIP_PRESS,
    MOUTH_CORNER_UP, MOUTH_DOWN, STRUCTURED_FIELDS,
};
pub use model::{rotation_matrix, FlameParams, Mesh, ModelFile, MorphableModel, PoseJoint, Region};
pub use obj::{export_obj, load_obj, obj_string, parse_obj};
