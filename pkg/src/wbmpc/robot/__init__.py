from wbmpc.robot.model import Frame, ModelError, RobotModel
from wbmpc.robot.biped import default_biped_dict

__all__ = ["RobotModel", "Frame", "ModelError", "default_biped_dict"]
