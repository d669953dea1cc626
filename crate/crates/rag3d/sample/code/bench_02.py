import bpy

stone = bpy.data.materials.new(name="Granite")
stone.diffuse_color = (0.5, 0.5, 0.48, 1.0)
stone.roughness = 0.9

bpy.ops.mesh.primitive_cube_add(size=1.0, location=(0, 0, 0.45))
slab = bpy.context.active_object
slab.name = "Slab"
slab.scale = (0.9, 0.25, 0.05)
slab.data.materials.append(stone)

for i, x in enumerate((-0.65, 0.65)):
    bpy.ops.mesh.primitive_cube_add(size=1.0, location=(x, 0, 0.2))
    block = bpy.context.active_object
    block.name = f"Support_{i}"
    block.scale = (0.12, 0.22, 0.2)
    block.data.materials.append(stone)
