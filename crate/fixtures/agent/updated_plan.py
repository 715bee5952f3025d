def updated_plan():
  # Step 2: Retry different URL
  url = GoogleSearchTool("AI chip summary")[0]['url']
  VisitTool(url)
  # Step 3: Scroll
  PageDownTool()
  # Step 4: Extract and summarize
  text = FinderTool("AI chip")
  drivers = TextInspectorTool(text=text, 
    focus="growth drivers", count=3)
