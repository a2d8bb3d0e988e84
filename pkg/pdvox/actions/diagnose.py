import asyncio
import os

from aijson import Action, BaseModel

from pdvox.models.subject import Label, Sex
from pdvox.utils.inference import diagnose, occlusion_for_volume


class BaseVolumeInputs(BaseModel):
    checkpoint: str
    volume_path: str
    age: int
    sex: Sex


class DiagnoseOutputs(BaseModel):
    pd_probability: float
    label: Label


class OcclusionInputs(BaseVolumeInputs):
    box: int = 2
    stride: int = 1
    output_path: None | str = None


class OcclusionOutputs(BaseModel):
    heatmap_path: str


class Diagnose(Action[BaseVolumeInputs, DiagnoseOutputs]):
    name = "pdvox_diagnose"

    async def run(self, inputs: BaseVolumeInputs) -> DiagnoseOutputs:
        pd_probability, label = await asyncio.to_thread(
            diagnose,
            self.log,
            inputs.checkpoint,
            inputs.volume_path,
            inputs.age,
            inputs.sex,
        )
        return DiagnoseOutputs(pd_probability=pd_probability, label=label)


class Occlusion(Action[OcclusionInputs, OcclusionOutputs]):
    name = "pdvox_occlusion"

    async def run(self, inputs: OcclusionInputs) -> OcclusionOutputs:
        output_path = inputs.output_path
        if output_path is None:
            stem = os.path.splitext(os.path.basename(inputs.volume_path))[0]
            output_path = os.path.join(self.temp_dir, f"heatmap_{stem}.mvol")
        path = await asyncio.to_thread(
            occlusion_for_volume,
            self.log,
            inputs.checkpoint,
            inputs.volume_path,
            inputs.age,
            inputs.sex,
            output_path,
            inputs.box,
            inputs.stride,
        )
        return OcclusionOutputs(heatmap_path=str(path))
